"""Q-value providers.

Two interchangeable Q-functions are provided: a dictionary-backed
``QTable`` for tabular Q-learning / SARSA and a small numpy ``MlpQNetwork``
trained DQN-style from a replay buffer. Both answer ``q_values(obs)`` with
a length-4 float array, which is all the introspection code needs.
"""

from __future__ import annotations

import copy
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import N_ACTIONS, Action, ContractViolation, Observation

FORMAT_VERSION = 1


class UpdateRule(str, enum.Enum):
    Q_LEARNING = "q-learning"
    SARSA = "sarsa"


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.05
    decay_fraction: float = 0.1

    def __post_init__(self):
        if not (0 <= self.end <= self.start <= 1):
            raise ValueError("need 0 <= end <= start <= 1")
        if not (0 <= self.decay_fraction <= 1):
            raise ValueError("decay_fraction must lie in [0, 1]")

    def value(self, step: int, total_steps: int) -> float:
        horizon = self.decay_fraction * total_steps
        if horizon <= 0 or step >= horizon:
            return self.end
        frac = step / horizon
        return self.start + frac * (self.end - self.start)


@dataclass(frozen=True)
class LearnerConfig:
    alpha: float = 0.001
    gamma: float = 0.99
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    total_steps: int = 35000
    learning_starts: int = 9750
    update_rule: UpdateRule = UpdateRule.Q_LEARNING
    # DQN only
    batch_size: int = 32
    buffer_capacity: int = 10000
    target_sync: int = 1000
    hidden: tuple[int, ...] = (64, 64)
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    train_freq: int = 1

    def __post_init__(self):
        if not (0 < self.alpha <= 1):
            raise ValueError("alpha must lie in (0, 1]")
        if not (0 < self.gamma < 1):
            raise ValueError("gamma must lie in (0, 1)")
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if self.learning_starts < 0:
            raise ValueError("learning_starts must be non-negative")
        object.__setattr__(self, "update_rule", UpdateRule(self.update_rule))


@dataclass(frozen=True)
class Transition:
    obs: Observation
    action: int
    reward: float
    next_obs: Observation
    terminal: bool


def _key(obs) -> tuple[int, int, int]:
    if isinstance(obs, Observation):
        return obs.as_tuple()
    return tuple(int(v) for v in obs)


class QTable:
    """Sparse table of action-values keyed by ``(x, y, dist_bin)``."""

    kind = "tabular"

    def __init__(self, default: float = 0.0):
        self.default = float(default)
        self.entries: dict[tuple[int, int, int], np.ndarray] = {}

    def q_values(self, obs) -> np.ndarray:
        row = self.entries.get(_key(obs))
        if row is None:
            return np.full(N_ACTIONS, self.default)
        return row.copy()

    def row(self, obs) -> np.ndarray:
        """Mutable row, created on first write."""
        k = _key(obs)
        row = self.entries.get(k)
        if row is None:
            row = self.entries[k] = np.full(N_ACTIONS, self.default)
        return row

    def snapshot(self) -> QTable:
        return copy.deepcopy(self)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, obs):
        return _key(obs) in self.entries


def select_action(q: np.ndarray, epsilon: float, rng: np.random.Generator) -> Action:
    """Epsilon-greedy choice with uniform tie-breaking among maximal actions."""
    if not (0 <= epsilon <= 1):
        raise ValueError("epsilon must lie in [0, 1]")
    if epsilon > 0 and rng.random() < epsilon:
        return Action(int(rng.integers(N_ACTIONS)))
    q = np.asarray(q)
    best = np.flatnonzero(q == q.max())
    if len(best) == 1:
        return Action(int(best[0]))
    return Action(int(best[rng.integers(len(best))]))


def td_target(table: QTable, tr: Transition, gamma: float, rule: UpdateRule, next_action=None) -> float:
    if tr.terminal:
        return tr.reward
    if rule is UpdateRule.SARSA:
        if next_action is None:
            raise ContractViolation("SARSA update on a non-terminal transition needs next_action")
        bootstrap = table.q_values(tr.next_obs)[int(next_action)]
    else:
        bootstrap = table.q_values(tr.next_obs).max()
    return tr.reward + gamma * bootstrap


def td_update(
    table: QTable,
    tr: Transition,
    alpha: float,
    gamma: float,
    rule: UpdateRule | str = UpdateRule.Q_LEARNING,
    next_action=None,
) -> QTable:
    """One temporal-difference step on ``Q(s, a)``; mutates and returns ``table``."""
    rule = UpdateRule(rule)
    target = td_target(table, tr, gamma, rule, next_action)
    if alpha == 0:
        return table
    row = table.row(tr.obs)
    row[tr.action] += alpha * (target - row[tr.action])
    return table


# --------------------------------------------------------------------------
# DQN


def encode_obs(obs, side_length: int = 40, max_dist_bin: int = 57) -> np.ndarray:
    x, y, d = _key(obs)
    return np.array([x / side_length, y / side_length, d / max_dist_bin])


def encode_batch(observations, side_length: int = 40, max_dist_bin: int = 57) -> np.ndarray:
    arr = np.asarray([_key(o) for o in observations], dtype=float).reshape(-1, 3)
    return arr / np.array([side_length, side_length, max_dist_bin])


class ReplayBuffer:
    def __init__(self, capacity: int = 10000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, 3))
        self.next_obs = np.zeros((capacity, 3))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.terminals = np.zeros(capacity, dtype=bool)
        self.pos = 0
        self.size = 0

    def add(self, obs_vec, action, reward, next_obs_vec, terminal):
        i = self.pos
        self.obs[i] = obs_vec
        self.actions[i] = int(action)
        self.rewards[i] = reward
        self.next_obs[i] = next_obs_vec
        self.terminals[i] = terminal
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def __len__(self):
        return self.size

    def sample(self, batch_size: int, rng: np.random.Generator):
        if self.size == 0:
            raise ContractViolation("cannot sample an empty replay buffer")
        idx = rng.integers(self.size, size=batch_size)
        return (
            self.obs[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_obs[idx],
            self.terminals[idx],
        )


class MlpQNetwork:
    """ReLU MLP with a linear 4-way head, plus a frozen target copy.

    Parameters live in ``self.params`` as ``[W0, b0, W1, b1, ...]`` with
    ``W`` shaped (fan_in, fan_out) so a batch forward pass is ``x @ W + b``.
    """

    kind = "mlp"

    def __init__(self, sizes=(3, 64, 64, N_ACTIONS), rng: np.random.Generator | None = None,
                 side_length: int = 40, max_dist_bin: int = 57):
        self.sizes = tuple(int(s) for s in sizes)
        self.side_length = side_length
        self.max_dist_bin = max_dist_bin
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = math.sqrt(6.0 / fan_in)  # He-uniform
            self.params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))
        self.target = [p.copy() for p in self.params]
        self._adam_m = [np.zeros_like(p) for p in self.params]
        self._adam_v = [np.zeros_like(p) for p in self.params]
        self._adam_t = 0

    # forward / backward -------------------------------------------------

    @staticmethod
    def _forward(params, x):
        acts = [x]
        h = x
        n_layers = len(params) // 2
        for i in range(n_layers):
            z = h @ params[2 * i] + params[2 * i + 1]
            h = np.maximum(z, 0.0) if i < n_layers - 1 else z
            acts.append(h)
        return h, acts

    def predict(self, x: np.ndarray, target: bool = False) -> np.ndarray:
        out, _ = self._forward(self.target if target else self.params, np.atleast_2d(x))
        return out

    def q_values(self, obs) -> np.ndarray:
        return self.predict(encode_obs(obs, self.side_length, self.max_dist_bin))[0]

    def loss_and_grads(self, obs, actions, targets, params=None):
        """Mean squared TD error over the batch and its gradient w.r.t. ``params``."""
        params = self.params if params is None else params
        out, acts = self._forward(params, obs)
        n = len(actions)
        rows = np.arange(n)
        err = out[rows, actions] - targets
        loss = float(np.mean(err ** 2))

        delta = np.zeros_like(out)
        delta[rows, actions] = 2.0 * err / n
        grads = [None] * len(params)
        n_layers = len(params) // 2
        for i in reversed(range(n_layers)):
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ params[2 * i].T) * (acts[i] > 0)
        return loss, grads

    def adam_step(self, grads, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        b1, b2 = betas
        self._adam_t += 1
        t = self._adam_t
        for p, g, m, v in zip(self.params, grads, self._adam_m, self._adam_v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            p -= lr * m_hat / (np.sqrt(v_hat) + eps)

    def sync_target(self):
        self.target = [p.copy() for p in self.params]

    def snapshot(self) -> MlpQNetwork:
        return copy.deepcopy(self)


def dqn_targets(net: MlpQNetwork, rewards, next_obs, terminals, gamma: float) -> np.ndarray:
    bootstrap = net.predict(next_obs, target=True).max(axis=1)
    return rewards + gamma * np.where(terminals, 0.0, bootstrap)


def dqn_train_step(net: MlpQNetwork, buffer: ReplayBuffer, config: LearnerConfig, step: int,
                   rng: np.random.Generator) -> float:
    """Sample a batch, take one Adam step on the squared TD error, maybe sync the target."""
    if step < config.learning_starts or len(buffer) < min(config.learning_starts, buffer.capacity):
        raise ContractViolation(
            f"dqn_train_step at step {step} before learning_starts={config.learning_starts}"
        )
    obs, actions, rewards, next_obs, terminals = buffer.sample(config.batch_size, rng)
    targets = dqn_targets(net, rewards, next_obs, terminals, config.gamma)
    loss, grads = net.loss_and_grads(obs, actions, targets)
    net.adam_step(grads, config.alpha, config.adam_betas, config.adam_eps)
    if step % config.target_sync == 0:
        net.sync_target()
    return loss


# --------------------------------------------------------------------------
# persistence


class QFunctionFormatError(ValueError):
    pass


def qfunction_to_dict(qf) -> dict:
    if isinstance(qf, QTable):
        entries = [
            {"obs": list(k), "q": [float(v) for v in row]}
            for k, row in sorted(qf.entries.items())
        ]
        return {"kind": "tabular", "version": FORMAT_VERSION, "default": qf.default, "entries": entries}
    if isinstance(qf, MlpQNetwork):
        layers = []
        for i in range(0, len(qf.params), 2):
            layers.append({"W": qf.params[i].tolist(), "b": qf.params[i + 1].tolist()})
        return {
            "kind": "mlp",
            "version": FORMAT_VERSION,
            "sizes": list(qf.sizes),
            "side_length": qf.side_length,
            "max_dist_bin": qf.max_dist_bin,
            "layers": layers,
        }
    raise TypeError(f"cannot serialise {type(qf).__name__}")


def qfunction_from_dict(data: dict):
    if not isinstance(data, dict):
        raise QFunctionFormatError("Q-function file must hold a JSON object")
    version = data.get("version")
    if version != FORMAT_VERSION:
        raise QFunctionFormatError(f"unsupported Q-function version {version!r} (expected {FORMAT_VERSION})")
    kind = data.get("kind")
    try:
        if kind == "tabular":
            table = QTable(default=float(data["default"]))
            for e in data["entries"]:
                key = tuple(int(v) for v in e["obs"])
                q = np.array([float(v) for v in e["q"]])
                if len(key) != 3 or q.shape != (N_ACTIONS,):
                    raise QFunctionFormatError(f"malformed entry {e!r}")
                table.entries[key] = q
            return table
        if kind == "mlp":
            sizes = tuple(int(s) for s in data["sizes"])
            net = MlpQNetwork(sizes, side_length=int(data["side_length"]),
                              max_dist_bin=int(data["max_dist_bin"]))
            params = []
            for layer, fan_in, fan_out in zip(data["layers"], sizes[:-1], sizes[1:], strict=True):
                W = np.array(layer["W"], dtype=float)
                b = np.array(layer["b"], dtype=float)
                if W.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                    raise QFunctionFormatError("layer shape does not match declared sizes")
                params += [W, b]
            net.params = params
            net.sync_target()
            return net
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, QFunctionFormatError):
            raise
        raise QFunctionFormatError(f"malformed {kind} Q-function: {exc}") from exc
    raise QFunctionFormatError(f"unknown Q-function kind {kind!r}")


def save_qfunction(qf, path) -> None:
    Path(path).write_text(json.dumps(qfunction_to_dict(qf)))


def load_qfunction(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise QFunctionFormatError(f"{path}: not valid JSON ({exc})") from exc
    return qfunction_from_dict(data)
