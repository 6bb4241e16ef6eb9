"""Template explanations built from per-action success probabilities."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .env import Action, ContractViolation


@dataclass(frozen=True)
class Explanation:
    text: str
    chosen_action: Action
    chosen_probability: float
    contrast_action: Action | None = None
    contrast_probability: float | None = None

    def __post_init__(self):
        if not self.text:
            raise ValueError("explanation text must be non-empty")
        if (self.contrast_action is None) != (self.contrast_probability is None):
            raise ValueError("contrast action and probability come together")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "chosen_action": self.chosen_action.verb,
            "chosen_probability": self.chosen_probability,
            "contrast_action": None if self.contrast_action is None else self.contrast_action.verb,
            "contrast_probability": self.contrast_probability,
        }


def percent(p: float) -> int:
    """Integer percent, rounding halves up (0.875 -> 88)."""
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"probability {p!r} outside [0, 1]")
    # round() is banker's rounding and 0.285 * 100 == 28.499999999999996;
    # snap to 9 decimals first so 0.285 reads as 29 %
    scaled = float(f"{p * 100:.9f}")
    return int(math.floor(scaled + 0.5))


def rank_actions(probs) -> list[tuple[Action, float]]:
    pairs = [(Action(i), float(p)) for i, p in enumerate(probs)]
    return sorted(pairs, key=lambda ap: (-ap[1], int(ap[0])))


def contrastive_explanation(chosen, contrast, probs) -> Explanation:
    chosen, contrast = Action.parse(chosen), Action.parse(contrast)
    if chosen == contrast:
        raise ContractViolation("chosen and contrast actions must differ")
    pc, pk = float(probs[chosen]), float(probs[contrast])
    text = (
        f"I moved {chosen.verb} because it has a success probability of {percent(pc)} %, "
        f"whereas moving {contrast.verb} only has a success probability of {percent(pk)} %."
    )
    return Explanation(text, chosen, pc, contrast, pk)


def standalone_explanation(chosen, probs) -> Explanation:
    chosen = Action.parse(chosen)
    p = float(probs[chosen])
    return Explanation(
        f"I moved {chosen.verb} because it has a success probability of {percent(p)} %.",
        chosen,
        p,
    )
