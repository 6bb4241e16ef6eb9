"""Multi-seed training runs with probe-state logging, aggregation and export.

A run trains one agent per seed, and at every log trigger (episode end in
episodic mode, every N steps otherwise) records the four raw action-values
at each probe position. Normalization and success probabilities are filled
in afterwards so a single min/max window covers a whole curve.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import io
import json
import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import (
    EpsilonSchedule,
    LearnerConfig,
    MlpQNetwork,
    QTable,
    ReplayBuffer,
    Transition,
    UpdateRule,
    dqn_train_step,
    encode_obs,
    save_qfunction,
    select_action,
    td_update,
)
from .env import Action, DroneWorld, EnvConfig, Mode, dist_bin, in_square
from .explain import contrastive_explanation, rank_actions
from .introspection import IntrospectionConfig, NormalizationStats, normalize_q_state, probabilities_from_q

log = logging.getLogger(__name__)

LOG_COLUMNS = ["seed", "step", "episode", "probe_label", "dist_bin", "action", "q_raw", "q_norm", "probability"]
AGG_COLUMNS = ["probe_label", "action", "bucket_start", "mean", "std", "n_seeds"]
EXPORT_VERSION = 1


class AgentKind(str, enum.Enum):
    TABULAR_Q = "tabular-q"
    SARSA = "sarsa"
    DQN = "dqn"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProbeSpec:
    label: str
    position: tuple[int, int]
    every_n: int = 150  # non-episodic cadence; episodic runs log at each episode end

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(int(v) for v in self.position))
        if self.every_n < 1:
            raise ConfigError("probe every_n must be positive")


BOTTOM_RIGHT = ProbeSpec("bottom-right", (38, 2))
TOP_LEFT = ProbeSpec("top-left", (2, 38))


@dataclass(frozen=True)
class ExperimentConfig:
    mode: Mode = Mode.EPISODIC
    agent: AgentKind = AgentKind.TABULAR_Q
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    total_steps: int = 35000
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    introspection: IntrospectionConfig = field(default_factory=IntrospectionConfig)
    probes: tuple[ProbeSpec, ...] = (BOTTOM_RIGHT, TOP_LEFT)
    output_dir: str | None = None
    window: str = "cumulative"
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "agent", AgentKind(self.agent))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "probes", tuple(self.probes))
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be positive")
        if not self.probes:
            raise ConfigError("at least one probe is required")
        labels = [p.label for p in self.probes]
        if len(set(labels)) != len(labels):
            raise ConfigError("probe labels must be unique")
        for p in self.probes:
            if not in_square(p.position, self.env.side_length):
                raise ConfigError(f"probe {p.label} at {p.position} lies outside the square")
        if self.window not in ("cumulative", "per-episode"):
            raise ConfigError("window must be 'cumulative' or 'per-episode'")
        if self.agent is AgentKind.SARSA and self.learner.update_rule is not UpdateRule.SARSA:
            object.__setattr__(self, "learner", dataclasses.replace(self.learner, update_rule=UpdateRule.SARSA))

    @property
    def report_from_step(self) -> int:
        """First step that counts for aggregation (DQN warm-up is excluded)."""
        return self.learner.learning_starts if self.agent is AgentKind.DQN else 0

    @classmethod
    def preset(cls, mode="episodic", agent="tabular-q", **overrides) -> ExperimentConfig:
        """Defaults used by the CLI and scripts.

        Tabular learners get a step size of 0.1; 0.001 is the DQN Adam rate
        and barely moves a table in 35k steps.
        """
        agent = AgentKind(agent)
        learner = overrides.pop("learner", None)
        if learner is None:
            learner = LearnerConfig(alpha=0.1) if agent is not AgentKind.DQN else LearnerConfig()
        return cls(mode=mode, agent=agent, learner=learner, **overrides)


# --------------------------------------------------------------------------
# config (de)serialisation

_NESTED = {"learner": LearnerConfig, "env": EnvConfig, "introspection": IntrospectionConfig}


def _strict_kwargs(cls, data: dict, where: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    return dict(data)


def config_from_dict(data: dict) -> ExperimentConfig:
    kw = _strict_kwargs(ExperimentConfig, data, "config")
    try:
        for key, cls in _NESTED.items():
            if key in kw:
                sub = _strict_kwargs(cls, kw[key], key)
                if cls is LearnerConfig:
                    if "epsilon" in sub:
                        sub["epsilon"] = EpsilonSchedule(**_strict_kwargs(EpsilonSchedule, sub["epsilon"], "learner.epsilon"))
                    for tup in ("hidden", "adam_betas"):
                        if tup in sub:
                            sub[tup] = tuple(sub[tup])
                kw[key] = cls(**sub)
        if "probes" in kw:
            kw["probes"] = tuple(ProbeSpec(**_strict_kwargs(ProbeSpec, p, "probes[]")) for p in kw["probes"])
        if "seeds" in kw:
            kw["seeds"] = tuple(kw["seeds"])
        return ExperimentConfig(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def config_to_dict(config: ExperimentConfig) -> dict:
    def plain(v):
        if isinstance(v, enum.Enum):
            return v.value
        if dataclasses.is_dataclass(v):
            return {f.name: plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, (tuple, list)):
            return [plain(x) for x in v]
        return v

    return plain(config)


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return config_from_dict(data)


# --------------------------------------------------------------------------
# probe log


@dataclass
class ProbeRow:
    seed: int
    step: int
    episode: int
    probe_label: str
    dist_bin: int
    action: Action
    q_raw: float
    q_norm: float = math.nan
    probability: float = math.nan


@dataclass
class ProbeLog:
    rows: list[ProbeRow] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def seeds(self) -> list[int]:
        return sorted({r.seed for r in self.rows})

    def labels(self) -> list[str]:
        return list(dict.fromkeys(r.probe_label for r in self.rows))

    def sort(self) -> None:
        self.rows.sort(key=lambda r: (r.seed, r.step))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(LOG_COLUMNS)
        for r in self.rows:
            w.writerow([
                r.seed, r.step, r.episode, r.probe_label, r.dist_bin, r.action.verb,
                repr(float(r.q_raw)), repr(float(r.q_norm)), repr(float(r.probability)),
            ])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> ProbeLog:
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != LOG_COLUMNS:
            raise ValueError(f"probe log header must be {LOG_COLUMNS}, got {header}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(LOG_COLUMNS):
                raise ValueError(f"probe log line {lineno}: expected {len(LOG_COLUMNS)} fields")
            s, st, ep, lab, d, a, q, qn, p = rec
            rows.append(ProbeRow(int(s), int(st), int(ep), lab, int(d), Action.parse(a),
                                 float(q), float(qn), float(p)))
        return cls(rows)

    def to_records(self) -> list[dict]:
        return [
            {"seed": r.seed, "step": r.step, "episode": r.episode, "probe_label": r.probe_label,
             "dist_bin": r.dist_bin, "action": r.action.verb, "q_raw": r.q_raw,
             "q_norm": r.q_norm, "probability": r.probability}
            for r in self.rows
        ]

    @classmethod
    def from_records(cls, records) -> ProbeLog:
        return cls([
            ProbeRow(int(d["seed"]), int(d["step"]), int(d["episode"]), d["probe_label"], int(d["dist_bin"]),
                     Action.parse(d["action"]), float(d["q_raw"]), float(d["q_norm"]), float(d["probability"]))
            for d in records
        ])


def read_probe_log(path) -> ProbeLog:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        return ProbeLog.from_records(json.loads(text)["rows"])
    return ProbeLog.from_csv(text)


def _instants(log: ProbeLog):
    """Group rows into one 4-action record per (seed, label, step)."""
    groups: dict[tuple, list[ProbeRow]] = defaultdict(list)
    for r in log.rows:
        groups[(r.seed, r.probe_label, r.step)].append(r)
    return groups


def window_stats(log: ProbeLog, seed: int | None = None, label: str | None = None) -> NormalizationStats:
    """Min/max over every logged Q-value at a probe (all actions, all instants)."""
    vals = [r.q_raw for r in log.rows
            if (seed is None or r.seed == seed) and (label is None or r.probe_label == label)]
    return NormalizationStats.from_values(vals, seed=seed, probe_label=label)


def compute_probabilities(log: ProbeLog, config: IntrospectionConfig, window: str = "cumulative") -> ProbeLog:
    """Fill ``q_norm`` and ``probability`` in place.

    ``cumulative`` uses one min/max per (seed, probe) over the whole run;
    ``per-episode`` uses only the four values logged at that instant.
    """
    groups = _instants(log)
    stats_cache: dict[tuple, NormalizationStats] = {}
    for (seed, label, _), rows in groups.items():
        rows.sort(key=lambda r: int(r.action))
        q = np.array([r.q_raw for r in rows])
        if window == "cumulative":
            key = (seed, label)
            if key not in stats_cache:
                stats_cache[key] = window_stats(log, seed, label)
            stats = stats_cache[key]
        else:
            stats = NormalizationStats.from_values(q)
        qn = normalize_q_state(q, stats, config)
        p = probabilities_from_q(q, stats, config)
        for r, a, b in zip(rows, qn, p):
            r.q_norm = float(a)
            r.probability = float(b)
    return log


# --------------------------------------------------------------------------
# training


def _probe_rows(qf, config: ExperimentConfig, seed, step, episode, mailbox, due) -> list[ProbeRow]:
    rows = []
    for probe in config.probes:
        if not due(probe):
            continue
        d = dist_bin(probe.position, mailbox)
        q = qf.q_values((probe.position[0], probe.position[1], d))
        for a in Action:
            rows.append(ProbeRow(seed, step, episode, probe.label, d, a, float(q[a])))
    return rows


def train_seed(config: ExperimentConfig, seed: int):
    """Train one agent; returns ``(qfunction, rows, episodes_completed)``."""
    env_cfg = dataclasses.replace(config.env, rng_seed=seed)
    env = DroneWorld(env_cfg, config.mode)
    rng = np.random.default_rng([seed, 1])
    lc = config.learner
    T = config.total_steps
    episodic = config.mode is Mode.EPISODIC
    dqn = config.agent is AgentKind.DQN

    if dqn:
        sizes = (3, *lc.hidden, 4)
        qf = MlpQNetwork(sizes, rng=np.random.default_rng([seed, 2]),
                         side_length=env_cfg.side_length, max_dist_bin=env_cfg.max_dist_bin)
        buffer = ReplayBuffer(lc.buffer_capacity)
    else:
        qf = QTable()
    enc = (lambda o: encode_obs(o, env_cfg.side_length, env_cfg.max_dist_bin))

    rows: list[ProbeRow] = []
    episode = 0
    state, obs = env.reset()
    action = select_action(qf.q_values(obs), lc.epsilon.value(0, T), rng)
    for step in range(1, T + 1):
        state, out = env.step(action)
        eps_next = lc.epsilon.value(step, T)
        tr = Transition(obs, int(action), out.reward, out.observation, out.terminal)
        next_action = None
        if dqn:
            buffer.add(enc(obs), int(action), out.reward, enc(out.observation), out.terminal)
            if step >= lc.learning_starts and step % lc.train_freq == 0:
                dqn_train_step(qf, buffer, lc, step, rng)
        elif lc.update_rule is UpdateRule.SARSA:
            if not out.terminal:
                next_action = select_action(qf.q_values(out.observation), eps_next, rng)
            td_update(qf, tr, lc.alpha, lc.gamma, lc.update_rule, next_action)
        else:
            td_update(qf, tr, lc.alpha, lc.gamma, lc.update_rule)
        if next_action is None and not out.terminal:
            next_action = select_action(qf.q_values(out.observation), eps_next, rng)

        if episodic:
            if out.terminal:
                episode += 1
                rows += _probe_rows(qf, config, seed, step, episode, state.mailbox_pos, lambda p: True)
        else:
            rows += _probe_rows(qf, config, seed, step, episode, state.mailbox_pos,
                                lambda p: step % p.every_n == 0)

        if out.terminal:
            state, obs = env.reset()
            action = select_action(qf.q_values(obs), eps_next, rng)
        else:
            obs, action = out.observation, next_action
    return qf, rows, episode


def _train_seed_job(args):
    config, seed = args
    return train_seed(config, seed)


def run_experiment(config: ExperimentConfig):
    """Train every seed, fill probabilities and persist artifacts if ``output_dir`` is set."""
    out_dir = None
    if config.output_dir is not None:
        out_dir = Path(config.output_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            probe = out_dir / ".write_test"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise ConfigError(f"output directory {out_dir} is not writable: {exc.strerror}") from exc

    jobs = [(config, s) for s in config.seeds]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_train_seed_job, jobs))
    else:
        results = [_train_seed_job(j) for j in jobs]

    qfunctions = []
    plog = ProbeLog()
    for seed, (qf, rows, episodes) in zip(config.seeds, results):
        log.info("seed %d: %d episodes, %d probe rows", seed, episodes, len(rows))
        qfunctions.append(qf)
        plog.rows += rows
    plog.sort()
    compute_probabilities(plog, config.introspection, config.window)

    if out_dir is not None:
        (out_dir / "config.json").write_text(json.dumps(config_to_dict(config), indent=2))
        for seed, qf in zip(config.seeds, qfunctions):
            save_qfunction(qf, out_dir / f"qfunc_seed{seed}.json")
        with open(out_dir / "probe_log.csv", "w", newline="") as fh:
            fh.write(plog.to_csv())
    return qfunctions, plog


# --------------------------------------------------------------------------
# aggregation and export


@dataclass(frozen=True)
class AggregateRow:
    probe_label: str
    action: Action
    bucket_start: int
    mean: float
    std: float
    n_seeds: int


def aggregate_runs(plog: ProbeLog, bucket_size: int = 500, start_step: int = 0) -> list[AggregateRow]:
    """Seed mean and population std of probability per (probe, action, step bucket).

    Each seed contributes the average of its own rows in a bucket, so seeds
    that log more often in a bucket do not dominate it.
    """
    if bucket_size < 1:
        raise ValueError("bucket_size must be >= 1")
    per_seed: dict[tuple, list[float]] = defaultdict(list)
    for r in plog.rows:
        if r.step < start_step:
            continue
        bucket = (r.step // bucket_size) * bucket_size
        per_seed[(r.probe_label, int(r.action), bucket, r.seed)].append(r.probability)

    grouped: dict[tuple, list[float]] = defaultdict(list)
    for (label, a, bucket, _seed), vals in per_seed.items():
        grouped[(label, a, bucket)].append(float(np.mean(vals)))

    label_order = {lab: i for i, lab in enumerate(plog.labels())}
    out = []
    for (label, a, bucket), vals in sorted(grouped.items(), key=lambda kv: (label_order[kv[0][0]], kv[0][2], kv[0][1])):
        arr = np.asarray(vals)
        out.append(AggregateRow(label, Action(a), bucket, float(arr.mean()), float(arr.std()), len(arr)))
    return out


def aggregate_to_csv(stats: list[AggregateRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(AGG_COLUMNS)
    for s in stats:
        w.writerow([s.probe_label, s.action.verb, s.bucket_start, repr(s.mean), repr(s.std), s.n_seeds])
    return buf.getvalue()


def aggregate_from_records(records) -> list[AggregateRow]:
    return [AggregateRow(d["probe_label"], Action.parse(d["action"]), int(d["bucket_start"]),
                         float(d["mean"]), float(d["std"]), int(d["n_seeds"])) for d in records]


def final_explanations(plog: ProbeLog) -> list[dict]:
    """Contrastive sentence (best vs worst action) at each probe's last logged instant per seed."""
    last: dict[tuple, int] = {}
    for r in plog.rows:
        key = (r.seed, r.probe_label)
        last[key] = max(last.get(key, r.step), r.step)
    out = []
    for (seed, label), step in sorted(last.items()):
        probs = [math.nan] * 4
        for r in plog.rows:
            if r.seed == seed and r.probe_label == label and r.step == step:
                probs[int(r.action)] = r.probability
        if any(math.isnan(p) for p in probs):
            continue
        ranked = rank_actions(probs)
        expl = contrastive_explanation(ranked[0][0], ranked[-1][0], probs)
        out.append({"seed": seed, "probe_label": label, "step": step, **expl.to_dict()})
    return out


def export(plog: ProbeLog, stats: list[AggregateRow], fmt: str, path) -> None:
    path = Path(path)
    if fmt == "csv":
        payload = plog.to_csv()
    elif fmt == "json":
        payload = json.dumps({
            "version": EXPORT_VERSION,
            "columns": LOG_COLUMNS,
            "rows": plog.to_records(),
            "aggregate": [
                {"probe_label": s.probe_label, "action": s.action.verb, "bucket_start": s.bucket_start,
                 "mean": s.mean, "std": s.std, "n_seeds": s.n_seeds}
                for s in stats
            ],
            "explanations": final_explanations(plog),
        }, indent=1)
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    try:
        with open(path, "w", newline="") as fh:
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def read_export(path):
    data = json.loads(Path(path).read_text())
    if data.get("version") != EXPORT_VERSION:
        raise ValueError(f"unsupported export version {data.get('version')!r}")
    return ProbeLog.from_records(data["rows"]), aggregate_from_records(data["aggregate"])


def final_bucket_means(plog: ProbeLog, label: str, seed: int | None = None, bucket_size: int = 500,
                       total_steps: int | None = None) -> np.ndarray:
    """Per-action mean probability over the last bucket of a run.

    The last bucket is ``[total_steps - bucket_size, total_steps]``; rows are
    averaged per seed first when ``seed`` is None.
    """
    rows = [r for r in plog.rows if r.probe_label == label and (seed is None or r.seed == seed)]
    if not rows:
        raise ValueError(f"no rows for probe {label!r}")
    end = total_steps if total_steps is not None else max(r.step for r in rows)
    rows = [r for r in rows if r.step > end - bucket_size]
    per_seed: dict[int, list[list[float]]] = defaultdict(lambda: [[] for _ in range(4)])
    for r in rows:
        per_seed[r.seed][int(r.action)].append(r.probability)
    means = np.array([[np.mean(v) for v in acts] for acts in per_seed.values()])
    return means.mean(axis=0)
