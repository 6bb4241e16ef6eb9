"""Drone/mailbox search world.

A kinematic stand-in for the simulated drone: the drone sits on integer
meter coordinates inside a square, the mailbox sits anywhere in the square,
and the agent only sees its own position plus the floored distance to the
mailbox (never the direction).

Coordinates: x grows to the Right, y grows Forward. "Bottom-right" is
(high x, low y), "top-left" is (low x, high y).

Rewards are the sum of every case that applies to a transition.

Episodic:
    -0.1   every step
    -100   boundary attempt (position unchanged)
    +1/-1  distance bin decreased/increased
    +100   found (terminal)
    -100   150th step without finding (terminal)

Non-episodic:
    -100   boundary attempt
    +1     distance bin decreased
    +100   found; the mailbox respawns and the run continues
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

STEP_COST = -0.1
BOUNDARY_PENALTY = -100.0
TIMEOUT_PENALTY = -100.0
FOUND_REWARD = 100.0
CLOSER_REWARD = 1.0
FARTHER_PENALTY = -1.0


class Action(enum.IntEnum):
    LEFT = 0
    RIGHT = 1
    FORWARD = 2
    BACKWARD = 3

    @property
    def delta(self) -> tuple[int, int]:
        return _DELTAS[self]

    @property
    def verb(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, name: str | int | Action) -> Action:
        if isinstance(name, (int, Action)):
            return cls(int(name))
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(
                f"unknown action {name!r}; expected one of left, right, forward, backward"
            ) from None


_DELTAS = {
    Action.LEFT: (-1, 0),
    Action.RIGHT: (1, 0),
    Action.FORWARD: (0, 1),
    Action.BACKWARD: (0, -1),
}

N_ACTIONS = len(Action)


class Mode(str, enum.Enum):
    EPISODIC = "episodic"
    NON_EPISODIC = "non-episodic"


class ContractViolation(RuntimeError):
    """A caller broke an operation's precondition."""


@dataclass(frozen=True)
class EnvConfig:
    side_length: int = 40
    step_length: int = 1
    found_threshold: float = 2.0
    time_limit: int = 150
    rng_seed: int = 0

    def __post_init__(self):
        if self.side_length < 1:
            raise ValueError("side_length must be positive")
        if self.step_length != 1:
            raise ValueError("only 1 m steps are supported")
        if not self.found_threshold > self.step_length / 2:
            raise ValueError("found_threshold must exceed half a step")
        if self.time_limit < 1:
            raise ValueError("time_limit must be positive")

    @property
    def max_dist_bin(self) -> int:
        return math.ceil(self.side_length * math.sqrt(2))


@dataclass(frozen=True)
class Observation:
    x: int
    y: int
    dist_bin: int

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.x, self.y, self.dist_bin)


@dataclass(frozen=True)
class WorldState:
    drone_pos: tuple[int, int]
    mailbox_pos: tuple[float, float]
    step_count: int = 0
    mode: Mode = Mode.EPISODIC
    mailboxes_found: int = 0
    terminal: bool = False


@dataclass(frozen=True)
class StepOutcome:
    observation: Observation
    reward: float
    terminal: bool
    info: dict = field(default_factory=dict)


def distance(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def dist_bin(a, b) -> int:
    return int(math.floor(distance(a, b)))


def observe(state: WorldState) -> Observation:
    x, y = state.drone_pos
    return Observation(int(x), int(y), dist_bin(state.drone_pos, state.mailbox_pos))


def in_square(pos, side: int) -> bool:
    return 0 <= pos[0] <= side and 0 <= pos[1] <= side


class DroneWorld:
    """Stateful wrapper around the transition function.

    ``reset``/``step`` follow the usual gym shape but return the full
    ``WorldState`` alongside the observation so tests can inspect it.
    ``state`` may be assigned directly to start from an arbitrary situation.
    """

    def __init__(self, config: EnvConfig | None = None, mode: Mode | str = Mode.EPISODIC):
        self.config = config or EnvConfig()
        self.mode = Mode(mode)
        self.rng = np.random.default_rng(self.config.rng_seed)
        self.state: WorldState | None = None

    @property
    def start_pos(self) -> tuple[int, int]:
        c = self.config.side_length // 2
        return (c, c)

    def _spawn_mailbox(self, drone_pos) -> tuple[float, float]:
        side = self.config.side_length
        while True:
            pos = (float(self.rng.uniform(0, side)), float(self.rng.uniform(0, side)))
            if distance(pos, drone_pos) >= self.config.found_threshold:
                return pos

    def reset(self) -> tuple[WorldState, Observation]:
        start = self.start_pos
        self.state = WorldState(
            drone_pos=start,
            mailbox_pos=self._spawn_mailbox(start),
            step_count=0,
            mode=self.mode,
        )
        return self.state, observe(self.state)

    def step(self, action: Action | int) -> tuple[WorldState, StepOutcome]:
        state = self.state
        if state is None:
            raise ContractViolation("step() called before reset()")
        if state.terminal:
            raise ContractViolation("cannot step a terminal episodic state; call reset()")
        action = Action(int(action))
        cfg = self.config
        episodic = state.mode is Mode.EPISODIC

        dx, dy = action.delta
        target = (state.drone_pos[0] + dx * cfg.step_length, state.drone_pos[1] + dy * cfg.step_length)
        boundary = not in_square(target, cfg.side_length)
        new_pos = state.drone_pos if boundary else target

        d_before = distance(state.drone_pos, state.mailbox_pos)
        d_after = distance(new_pos, state.mailbox_pos)
        bin_before = int(math.floor(d_before))
        bin_after = int(math.floor(d_after))
        closer = not boundary and bin_after < bin_before
        farther = not boundary and bin_after > bin_before
        found = d_after < cfg.found_threshold
        step_count = state.step_count + 1
        timeout = episodic and not found and step_count >= cfg.time_limit

        reward = 0.0
        if episodic:
            reward += STEP_COST
        if boundary:
            reward += BOUNDARY_PENALTY
        if closer:
            reward += CLOSER_REWARD
        if farther and episodic:
            reward += FARTHER_PENALTY
        if found:
            reward += FOUND_REWARD
        if timeout:
            reward += TIMEOUT_PENALTY

        mailbox = state.mailbox_pos
        n_found = state.mailboxes_found
        terminal = False
        if found:
            n_found += 1
            if episodic:
                terminal = True
            else:
                mailbox = self._spawn_mailbox(new_pos)
        if timeout:
            terminal = True

        self.state = replace(
            state,
            drone_pos=new_pos,
            mailbox_pos=mailbox,
            step_count=step_count,
            mailboxes_found=n_found,
            terminal=terminal,
        )
        info = {
            "distance_before": d_before,
            "distance_after": d_after,
            "boundary_violation": boundary,
            "found": found,
            "timeout": timeout,
            "closer": closer,
            "farther": farther,
        }
        return self.state, StepOutcome(observe(self.state), reward, terminal, info)
