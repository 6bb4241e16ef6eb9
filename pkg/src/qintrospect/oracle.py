"""Value-iteration reference for a small fixed-mailbox world.

With the mailbox pinned, the observation is a function of the drone
position, so the world is a finite deterministic MDP over lattice points.
The timeout is dropped (it would make the process non-Markov in the
position alone); everything else uses the episodic reward rules.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agents import QTable, Transition, select_action, td_update
from .env import N_ACTIONS, Action, DroneWorld, EnvConfig, Mode, WorldState, distance, observe

NO_TIMEOUT = 10**9


@dataclass
class GridMDP:
    side_length: int
    mailbox: tuple[float, float]
    states: list[tuple[int, int]]  # non-goal drone positions
    next_index: np.ndarray  # (S, A) index into states, -1 for terminal
    rewards: np.ndarray  # (S, A)
    observations: list[tuple[int, int, int]]


def build_grid_mdp(grid: int = 10, mailbox=(6.5, 3.5), found_threshold: float = 2.0) -> GridMDP:
    """Enumerate a ``grid`` x ``grid`` lattice (side length ``grid - 1``)."""
    side = grid - 1
    cfg = EnvConfig(side_length=side, found_threshold=found_threshold, time_limit=NO_TIMEOUT)
    world = DroneWorld(cfg, Mode.EPISODIC)
    states = [(x, y) for x in range(side + 1) for y in range(side + 1)
              if distance((x, y), mailbox) >= found_threshold]
    index = {s: i for i, s in enumerate(states)}
    nxt = np.full((len(states), N_ACTIONS), -1, dtype=np.int64)
    rew = np.zeros((len(states), N_ACTIONS))
    obs = []
    for i, s in enumerate(states):
        base = WorldState(drone_pos=s, mailbox_pos=tuple(mailbox))
        obs.append(observe(base).as_tuple())
        for a in Action:
            world.state = base
            st, out = world.step(a)
            rew[i, a] = out.reward
            if not out.terminal:
                nxt[i, a] = index[st.drone_pos]
    return GridMDP(side, tuple(mailbox), states, nxt, rew, obs)


def value_iteration(mdp: GridMDP, gamma: float = 0.99, tol: float = 1e-9, max_sweeps: int = 1_000_000):
    """Sweep Q <- r + gamma * max Q(s') until the largest change is below ``tol``."""
    q = np.zeros_like(mdp.rewards)
    terminal = mdp.next_index < 0
    safe_next = np.where(terminal, 0, mdp.next_index)
    for sweep in range(1, max_sweeps + 1):
        v = q.max(axis=1)
        new_q = mdp.rewards + gamma * np.where(terminal, 0.0, v[safe_next])
        delta = float(np.abs(new_q - q).max())
        q = new_q
        if delta < tol:
            return q, sweep
    raise RuntimeError(f"value iteration did not converge in {max_sweeps} sweeps")


def q_learning_on_mdp(mdp: GridMDP, steps: int = 200_000, gamma: float = 0.99, epsilon: float = 1.0,
                      max_episode_len: int = 50, seed: int = 0, omega: float = 0.7):
    """Tabular Q-learning with step size ``(1 + visits(s, a)) ** -omega`` and random starts.

    ``omega=1`` is the plain 1/n schedule; it converges at roughly
    ``t ** -(1 - gamma)`` and is hopeless at gamma=0.99 within a few hundred
    thousand steps. Any omega in (0.5, 1] satisfies the Robbins-Monro
    conditions. Episodes longer than ``max_episode_len`` are cut without a
    terminal flag so the update still bootstraps. Returns ``(table, visits)``.
    """
    rng = np.random.default_rng(seed)
    table = QTable()
    visits = np.zeros(mdp.rewards.shape, dtype=np.int64)
    s = int(rng.integers(len(mdp.states)))
    t = 0
    for _ in range(steps):
        o = mdp.observations[s]
        a = int(select_action(table.q_values(o), epsilon, rng))
        nxt = int(mdp.next_index[s, a])
        terminal = nxt < 0
        o2 = o if terminal else mdp.observations[nxt]
        alpha = 1.0 / (1.0 + visits[s, a]) ** omega
        visits[s, a] += 1
        td_update(table, Transition(o, a, float(mdp.rewards[s, a]), o2, terminal), alpha, gamma)
        t += 1
        if terminal or t >= max_episode_len:
            s = int(rng.integers(len(mdp.states)))
            t = 0
        else:
            s = nxt
    return table, visits


def max_error(table: QTable, mdp: GridMDP, q_star: np.ndarray, visits: np.ndarray) -> float:
    worst = 0.0
    for i, o in enumerate(mdp.observations):
        q = table.q_values(o)
        for a in range(N_ACTIONS):
            if visits[i, a]:
                worst = max(worst, abs(q[a] - q_star[i, a]))
    return worst


def write_oracle(path, grid: int = 10, gamma: float = 0.99, mailbox=(6.5, 3.5)) -> dict:
    mdp = build_grid_mdp(grid, mailbox)
    q, sweeps = value_iteration(mdp, gamma)
    data = {
        "grid": grid,
        "gamma": gamma,
        "mailbox": list(mdp.mailbox),
        "sweeps": sweeps,
        "entries": [{"obs": list(o), "q": [float(v) for v in row]} for o, row in zip(mdp.observations, q)],
    }
    Path(path).write_text(json.dumps(data, indent=1))
    return data
