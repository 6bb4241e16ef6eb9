"""Q-values to success probabilities.

Pipeline for one state: rescale the state's action-values into
``[b, r_max]`` using the min/max seen at that state, then map each value
through ``clip((1 - sigma) * (0.5 * log10(q / r_max) + 1), 0, 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .env import ContractViolation


class IntrospectionDomainError(ValueError):
    pass


@dataclass(frozen=True)
class IntrospectionConfig:
    """Knobs for the transform.

    r_max is the terminal reward for episodic tasks and the largest
    single-step reward for continuing ones (100 for both here).
    ``printed_floor`` switches normalization to the unfloored map whose
    image is ``[0, r_max - b]``.
    """

    r_max: float = 100.0
    sigma: float = 0.0
    b: float | None = None
    gamma: float = 0.99
    printed_floor: bool = False

    def __post_init__(self):
        if self.b is None:
            object.__setattr__(self, "b", self.r_max / 1000)
        if not (self.r_max > 0):
            raise ValueError("r_max must be positive")
        if not (0 < self.b < self.r_max):
            raise ValueError("need 0 < b < r_max")
        if not (0 <= self.sigma < 1):
            raise ValueError("sigma must lie in [0, 1)")
        if not (0 < self.gamma < 1):
            raise ValueError("gamma must lie in (0, 1)")


@dataclass
class NormalizationStats:
    """Observed min/max of a state's Q-values.

    ``q_min``/``q_max`` may also be arrays that broadcast against the values
    being normalized, e.g. shape (N, 1) for N independent states.
    """

    q_min: float = math.inf
    q_max: float = -math.inf
    window: dict = field(default_factory=dict)

    @classmethod
    def from_values(cls, values, **window) -> NormalizationStats:
        stats = cls(window=dict(window))
        stats.update(values)
        return stats

    @classmethod
    def per_row(cls, q) -> NormalizationStats:
        q = np.asarray(q, dtype=float)
        return cls(q.min(axis=-1, keepdims=True), q.max(axis=-1, keepdims=True), {"per_row": True})

    def update(self, values) -> None:
        arr = np.asarray(values, dtype=float)
        if arr.size == 0:
            return
        self.q_min = min(self.q_min, float(arr.min()))
        self.q_max = max(self.q_max, float(arr.max()))

    @property
    def empty(self) -> bool:
        return bool(np.any(np.asarray(self.q_min) > np.asarray(self.q_max)))


def estimate_distance(q: float, r_terminal: float, gamma: float) -> float:
    """Steps to the terminal reward implied by ``q = r_terminal * gamma**n``."""
    if q <= 0 or r_terminal <= 0:
        raise IntrospectionDomainError(
            "distance estimate needs positive q and r_terminal; normalize Q-values first"
        )
    if not (0 < gamma < 1):
        raise IntrospectionDomainError("gamma must lie in (0, 1)")
    return math.log(q / r_terminal) / math.log(gamma)


def success_probability(q, config: IntrospectionConfig):
    """Success probability of a positive action-value (scalar or array)."""
    arr = np.asarray(q, dtype=float)
    if np.any(~(arr > 0)):
        raise IntrospectionDomainError(
            f"success_probability needs q > 0, got {q!r}; "
            "normalize the state's Q-values into (0, r_max] first"
        )
    p = (1.0 - config.sigma) * (0.5 * np.log10(arr / config.r_max) + 1.0)
    p = np.clip(p, 0.0, 1.0)
    return float(p) if p.ndim == 0 else p


def normalize_q_state(q_values, stats: NormalizationStats, config: IntrospectionConfig) -> np.ndarray:
    """Affine map of ``[q_min, q_max]`` onto ``[b, r_max]``; a flat window maps to ``r_max``."""
    q = np.asarray(q_values, dtype=float)
    if stats.empty:
        raise ContractViolation("normalization stats are empty")
    lo = np.asarray(stats.q_min, dtype=float)
    hi = np.asarray(stats.q_max, dtype=float)
    if np.any(q < lo) or np.any(q > hi):
        raise ContractViolation(
            f"values {q.tolist()} fall outside the normalization window [{stats.q_min}, {stats.q_max}]"
        )
    r, b = config.r_max, config.b
    span = hi - lo
    flat = span == 0
    scaled = (q - lo) * (r - b) / np.where(flat, 1.0, span)
    if not config.printed_floor:
        # pin the top exactly; (hi - lo) * (r - b) / (hi - lo) + b can land one ulp off r
        scaled = np.where(q == hi, r, b + scaled)
    return np.where(flat, r, scaled)


def state_probabilities(qf, obs, stats: NormalizationStats, config: IntrospectionConfig) -> np.ndarray:
    return probabilities_from_q(qf.q_values(obs), stats, config)


def probabilities_from_q(q_values, stats: NormalizationStats, config: IntrospectionConfig) -> np.ndarray:
    return np.atleast_1d(success_probability(normalize_q_state(q_values, stats, config), config))
