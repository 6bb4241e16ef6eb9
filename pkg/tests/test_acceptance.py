"""Exit criteria. Run alone with ``pytest tests/test_acceptance.py -rA``.

Each test records a one-line detail; the terminal summary prints a
PASS/FAIL line per criterion.
"""

import math
import time

import numpy as np
import pytest

from qintrospect.agents import MlpQNetwork
from qintrospect.env import Action, DroneWorld, EnvConfig, Mode, WorldState
from qintrospect.explain import contrastive_explanation
from qintrospect.harness import BOTTOM_RIGHT, TOP_LEFT, ExperimentConfig, final_bucket_means, run_experiment
from qintrospect.introspection import (
    IntrospectionConfig,
    NormalizationStats,
    normalize_q_state,
    success_probability,
)
from qintrospect.oracle import build_grid_mdp, max_error, q_learning_on_mdp, value_iteration

L, R, F, B = Action
SEEDS = (0, 1, 2, 3, 4)
STEPS = 35000


def note(record_property, text):
    record_property("detail", text)


# -- 1 ----------------------------------------------------------------------

@pytest.mark.criterion(1, "success-probability closed forms")
def test_success_probability_closed_forms(record_property):
    t0 = time.perf_counter()
    cfg = IntrospectionConfig(sigma=0.0)
    for ratio, expected in [(1, 1.0), (0.1, 0.5), (0.01, 0.0), (0.001, 0.0)]:
        assert abs(success_probability(ratio * cfg.r_max, cfg) - expected) <= 1e-12
    cfg = IntrospectionConfig(sigma=0.1)
    assert abs(success_probability(cfg.r_max, cfg) - 0.9) <= 1e-12
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    note(record_property, f"{elapsed * 1e3:.1f} ms")


# -- 2 ----------------------------------------------------------------------

@pytest.mark.criterion(2, "normalization range / order / affine invariance over 1e5 vectors")
def test_normalization_properties(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    cfg = IntrospectionConfig()
    worst_affine = 0.0
    total = 0
    for n in range(2, 9):
        for _ in range(2):
            rows = -(-100_000 // 14)
            q = rng.normal(0, rng.uniform(0.1, 200, size=(rows, 1)), size=(rows, n))
            tie = rng.random(rows) < 0.1
            q[tie, -1] = q[tie, 0]  # inject ties
            qn = normalize_q_state(q, NormalizationStats.per_row(q), cfg)
            assert qn.min() >= cfg.b and qn.max() <= cfg.r_max
            p = success_probability(qn, cfg)
            order = np.argsort(q, axis=1, kind="stable")
            assert np.all(np.diff(np.take_along_axis(qn, order, 1), axis=1) >= 0)
            # clamping may merge ranks, never invert them
            assert np.all(np.diff(np.take_along_axis(p, order, 1), axis=1) >= 0)
            c = rng.uniform(0.01, 100, size=(rows, 1))
            d = rng.uniform(-1e3, 1e3, size=(rows, 1))
            q2 = c * q + d
            qn2 = normalize_q_state(q2, NormalizationStats.per_row(q2), cfg)
            worst_affine = max(worst_affine, float(np.abs(qn2 - qn).max()))
            total += rows
    assert total >= 100_000
    elapsed = time.perf_counter() - t0
    assert worst_affine < 1e-6
    assert elapsed < 10.0
    note(record_property, f"{total} vectors, max affine deviation {worst_affine:.2e}, {elapsed:.2f} s")


# -- 3 ----------------------------------------------------------------------

@pytest.mark.criterion(3, "tabular Q-learning matches value-iteration Q* on a 10x10 grid")
def test_value_iteration_oracle(record_property):
    t0 = time.perf_counter()
    mdp = build_grid_mdp(10)
    q_star, sweeps = value_iteration(mdp, gamma=0.99, tol=1e-9)
    table, visits = q_learning_on_mdp(mdp, steps=200_000, gamma=0.99)
    err = max_error(table, mdp, q_star, visits)
    elapsed = time.perf_counter() - t0
    assert err < 0.5
    assert elapsed < 120
    note(record_property, f"max |Q - Q*| = {err:.4f} over {int((visits > 0).sum())} pairs, "
                          f"VI sweeps {sweeps}, {elapsed:.1f} s")


# -- 4, 5, 9 ----------------------------------------------------------------

def _informative(plog, label, qf_by_seed):
    """Fraction of final-bucket probe rows whose state the table has actually stored."""
    rows = [r for r in plog.rows if r.probe_label == label and r.step > STEPS - 500]
    pos = BOTTOM_RIGHT.position if label == BOTTOM_RIGHT.label else TOP_LEFT.position
    hit = sum((pos[0], pos[1], r.dist_bin) in qf_by_seed[r.seed] for r in rows)
    return hit, len(rows)


@pytest.fixture(scope="module")
def episodic_run():
    t0 = time.perf_counter()
    cfg = ExperimentConfig.preset("episodic", "tabular-q", seeds=SEEDS, total_steps=STEPS)
    qfs, plog = run_experiment(cfg)
    return cfg, dict(zip(SEEDS, qfs)), plog, time.perf_counter() - t0


@pytest.fixture(scope="module")
def non_episodic_run():
    t0 = time.perf_counter()
    cfg = ExperimentConfig.preset("non-episodic", "tabular-q", seeds=SEEDS, total_steps=STEPS)
    qfs, plog = run_experiment(cfg)
    return cfg, dict(zip(SEEDS, qfs)), plog, time.perf_counter() - t0


def _order_ok(p, high, low):
    return all(p[h] >= p[l] for h in high for l in low)


@pytest.mark.criterion(4, "episodic reproduction at the bottom-right probe (tabular, 5x35000)")
def test_episodic_reproduction(episodic_run, record_property):
    cfg, qfs, plog, elapsed = episodic_run
    label = BOTTOM_RIGHT.label
    per_seed = {s: final_bucket_means(plog, label, seed=s, total_steps=STEPS) for s in SEEDS}
    ordered = sum(_order_ok(p, (F, L), (B, R)) for p in per_seed.values())
    mean = final_bucket_means(plog, label, total_steps=STEPS)
    hit, n = _informative(plog, label, qfs)
    note(record_property, f"seed-mean P[L,R,F,B]={np.round(mean, 3).tolist()}, ordering in {ordered}/5 seeds, "
                          f"L-R={mean[L] - mean[R]:+.4f}, informative final rows {hit}/{n}, {elapsed:.0f} s")
    assert elapsed < 600
    assert ordered >= 4
    assert np.all(mean >= 0.8)
    assert mean[L] - mean[R] > 0


@pytest.mark.criterion(5, "non-episodic reproduction at both corner probes (tabular, 5x35000)")
def test_non_episodic_reproduction(non_episodic_run, record_property):
    cfg, qfs, plog, elapsed = non_episodic_run
    tl = {s: final_bucket_means(plog, TOP_LEFT.label, seed=s, total_steps=STEPS) for s in SEEDS}
    br = {s: final_bucket_means(plog, BOTTOM_RIGHT.label, seed=s, total_steps=STEPS) for s in SEEDS}
    tl_ok = sum(_order_ok(p, (B, R), (F, L)) for p in tl.values())
    br_ok = sum(_order_ok(p, (F, L), (B, R)) for p in br.values())
    br_mean = final_bucket_means(plog, BOTTOM_RIGHT.label, total_steps=STEPS)
    hit_tl, n_tl = _informative(plog, TOP_LEFT.label, qfs)
    hit_br, n_br = _informative(plog, BOTTOM_RIGHT.label, qfs)
    note(record_property, f"top-left order {tl_ok}/5, bottom-right order {br_ok}/5, "
                          f"bottom-right P(F)={br_mean[F]:.3f} P(L)={br_mean[L]:.3f}, "
                          f"informative final rows {hit_tl + hit_br}/{n_tl + n_br}, {elapsed:.0f} s")
    assert elapsed < 600
    assert tl_ok >= 4 and br_ok >= 4
    assert abs(br_mean[F] - 0.97) <= 0.10
    assert abs(br_mean[L] - 0.95) <= 0.10


@pytest.mark.criterion(9, "identical configs give byte-identical probe logs")
def test_determinism(episodic_run, record_property):
    cfg, _, plog, _ = episodic_run
    again = run_experiment(cfg)[1]
    a, b = plog.to_csv().encode(), again.to_csv().encode()
    assert a == b
    note(record_property, f"{len(a)} bytes identical")


# -- 6 ----------------------------------------------------------------------

@pytest.mark.criterion(6, "DQN analytic gradient vs central finite differences")
def test_dqn_gradient_check(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    net = MlpQNetwork(rng=rng)
    for p in net.params[1::2]:
        p[:] = rng.normal(0, 0.1, size=p.shape)  # non-zero biases exercise their gradients
    obs = rng.random((32, 3))
    actions = rng.integers(0, 4, size=32)
    targets = rng.normal(0, 10, size=32)
    _, grads = net.loss_and_grads(obs, actions, targets)
    h = 1e-5
    worst = 0.0
    checked = 0
    for k, p in enumerate(net.params):
        flat = p.reshape(-1)
        for idx in rng.choice(flat.size, size=min(10, flat.size), replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            up, _ = net.loss_and_grads(obs, actions, targets)
            flat[idx] = orig - h
            down, _ = net.loss_and_grads(obs, actions, targets)
            flat[idx] = orig
            numeric = (up - down) / (2 * h)
            analytic = grads[k].reshape(-1)[idx]
            scale = max(abs(numeric), abs(analytic))
            rel = 0.0 if scale < 1e-10 else abs(numeric - analytic) / scale
            worst = max(worst, rel)
            checked += 1
    elapsed = time.perf_counter() - t0
    assert worst < 1e-4
    assert elapsed < 30
    note(record_property, f"max relative error {worst:.2e} over {checked} coordinates, {elapsed:.2f} s")


# -- 7 ----------------------------------------------------------------------

@pytest.mark.criterion(7, "explanation sentences are byte-exact")
def test_explanation_bytes(record_property):
    a = contrastive_explanation(L, R, [0.97, 0.88, 0.0, 0.0]).text
    b = contrastive_explanation(R, F, [0.0, 0.95, 0.86, 0.0]).text
    assert a.encode() == (
        b"I moved left because it has a success probability of 97 %, "
        b"whereas moving right only has a success probability of 88 %."
    )
    assert b.encode() == (
        b"I moved right because it has a success probability of 95 %, "
        b"whereas moving forward only has a success probability of 86 %."
    )
    note(record_property, "both sentences match")


# -- 8 ----------------------------------------------------------------------

def _expected_reward(mode, drone, mailbox, action, step_count, side, threshold, time_limit):
    """Reward rebuilt from the case tables, independently of the environment code."""
    dx, dy = {L: (-1, 0), R: (1, 0), F: (0, 1), B: (0, -1)}[action]
    tx, ty = drone[0] + dx, drone[1] + dy
    boundary = not (0 <= tx <= side and 0 <= ty <= side)
    new = drone if boundary else (tx, ty)
    before = math.floor(math.dist(drone, mailbox))
    after_exact = math.dist(new, mailbox)
    after = math.floor(after_exact)
    found = after_exact < threshold
    episodic = mode is Mode.EPISODIC
    timeout = episodic and not found and step_count + 1 >= time_limit
    cases = []
    if episodic:
        cases.append(-0.1)
    if boundary:
        cases.append(-100)
    elif after < before:
        cases.append(+1)
    elif after > before and episodic:
        cases.append(-1)
    if found:
        cases.append(+100)
    if timeout:
        cases.append(-100)
    terminal = episodic and (found or timeout)
    return sum(cases), terminal, found, timeout


@pytest.mark.criterion(8, "exhaustive reward conformance on a 5x5 world")
def test_reward_conformance(record_property):
    t0 = time.perf_counter()
    side, limit = 4, 150
    mailboxes = [(x / 2, y / 2) for x in range(9) for y in range(9)]
    checked = 0
    for threshold in (1.0, 2.0):
        for mode in Mode:
            world = DroneWorld(EnvConfig(side_length=side, found_threshold=threshold), mode)
            for drone in [(x, y) for x in range(side + 1) for y in range(side + 1)]:
                for mailbox in mailboxes:
                    if math.dist(drone, mailbox) < threshold:
                        continue  # already-found states are unreachable
                    for step_count in (0, limit - 2, limit - 1):
                        for action in Action:
                            world.state = WorldState(drone, mailbox, step_count, mode)
                            _, out = world.step(action)
                            reward, terminal, found, timeout = _expected_reward(
                                mode, drone, mailbox, action, step_count, side, threshold, limit)
                            assert math.isclose(out.reward, reward, abs_tol=1e-12), (mode, drone, mailbox, action)
                            assert out.terminal == terminal
                            assert out.info["found"] == found and out.info["timeout"] == timeout
                            if out.terminal:
                                assert out.info["found"] or out.info["timeout"]
                            checked += 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 5
    note(record_property, f"{checked} transitions, {elapsed:.2f} s")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
