"""Acceptance gate: one test per release criterion.

Each test prints a single ``CRITERION n: PASS|FAIL`` line.  Criteria 12
and 13 share one desk-scale sweep (a few minutes on one core) and carry
the ``slow`` marker; everything else runs in seconds.
"""

import functools
import time

import numpy as np
import pytest
from scipy import stats

from slicegame.allocation import allocate_guarded, rates_for_weights
from slicegame.experiments import (
    ExperimentConfig, dimension_share, rows_to_csv, sweep,
)
from slicegame.game import (
    bid_norm, brd_run, contraction_bound, is_nash_equilibrium,
    make_async_schedule, objective_gradient, objective_value,
    policy_dynamics, social_optimal, verify_epsilon_best_response,
)
from slicefigs import FigureSpec, render

from scenarios import (
    appendix_example, cycle_example, decay_example, make_scenario,
    random_bid_instance, random_well_dimensioned, single_bs_social_grid,
    weights_by_id,
)


def criterion(n, desc):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"\nCRITERION {n}: FAIL - {desc}")
                raise
            print(f"\nCRITERION {n}: PASS - {desc}")
        return wrapper
    return deco


def interior_weights(scn, rng, fill=0.8):
    w = np.zeros(scn.n_users)
    for v in range(scn.n_slices):
        users = scn.users_of[v]
        raw = rng.random(len(users)) + 0.2
        w[users] = raw / raw.sum() * scn.overall[v] * fill * rng.uniform(0.5, 1.0)
    return w


def near_kink(scn, w, margin=0.03):
    l = scn.local_bids(w)
    t = l.sum(axis=0)
    if (np.abs(t - 1.0) < margin).any():
        return True
    over = t > 1.0
    return bool((np.abs(l - scn.shares)[:, over] < margin).any())


# ---------------------------------------------------------------------------
# 1. worked allocation example


@criterion(1, "worked two-slice allocation exact to 1e-12, < 1 ms")
def test_criterion_01_worked_allocation():
    scn, weights = appendix_example()
    l = scn.local_bids(weights)
    best = min(
        _timed(lambda: allocate_guarded(l, scn.shares, scn.bs_ids))
        for _ in range(100))
    f = allocate_guarded(l, scn.shares, scn.bs_ids)
    expected = np.array([[0.5, 0.25], [0.5, 0.75]])
    assert np.abs(f - expected).max() <= 1e-12
    assert best < 1e-3


def _timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


# ---------------------------------------------------------------------------
# 2. exhaustion + protection on 10k random instances


@criterion(2, "exhaustion and guarantee protection on 10,000 instances, < 10 s")
def test_criterion_02_exhaustion_and_protection():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    for _ in range(10_000):
        l, s = random_bid_instance(rng)
        f = allocate_guarded(l, s)
        active = l.sum(axis=0) > 0
        if active.any():
            assert np.abs(f.sum(axis=0)[active] - 1.0).max() <= 1e-12
        assert (f >= np.minimum(l, s) - 1e-12).all()
    assert time.perf_counter() - t0 < 10.0


# ---------------------------------------------------------------------------
# 3. branch continuity at total bid exactly 1


@criterion(3, "underload/overload formulas agree at unit total bid, 1e-12")
def test_criterion_03_branch_continuity():
    rng = np.random.default_rng(3)
    for _ in range(1_000):
        V = int(rng.integers(2, 6))
        while True:                             # total bid exactly 1.0
            raw = rng.random(V) + 1e-3
            l = raw / raw.sum()
            l[-1] = 1.0 - l[:-1].sum()
            if l.min() > 0.0 and l.sum() == 1.0:
                break
        sraw = rng.random(V) + 1e-3
        s = sraw / sraw.sum() * rng.uniform(0.2, 1.0)
        if rng.random() < 0.3:                  # cover the no-excess corner
            s = np.maximum(s, l)
        f_under = l / l.sum()
        delta = np.maximum(l - s, 0.0)
        dsum = delta.sum()
        if dsum > 0:
            spare = 1.0 - np.minimum(s, l).sum()
            f_over = np.where(l < s, l, s + delta / dsum * spare)
        else:
            f_over = l.copy()
        assert np.abs(f_under - f_over).max() <= 1e-12
        f = allocate_guarded(l[:, None], s[:, None])[:, 0]
        assert np.abs(f - f_under).max() <= 1e-12


# ---------------------------------------------------------------------------
# 4. best-response cycle + equilibrium certificate


@criterion(4, "three-slice ring cycles between 0.75 and 0.30; analytic "
              "equilibrium certified")
def test_criterion_04_cycle_and_certificate():
    eps = 0.1
    scn, ne = cycle_example(eps=eps)
    w0 = weights_by_id(scn, {"u1a": 0.425, "u1b": 0.425,
                             "u2b": 0.425, "u2c": 0.425,
                             "u3a": 0.30, "u3c": 0.55})
    trace = brd_run(scn, delta=1e-6, max_rounds=50, w0=w0, cycle_tol=1e-4)
    assert not trace.converged
    assert trace.cycle_detected
    for uid in ("u1a", "u2b", "u3c"):
        i = scn.user_ids.index(uid)
        series = np.array([w[i] for w in trace.weights_history[2:]])
        highs, lows = series[0::2], series[1::2]
        if highs.mean() < lows.mean():
            highs, lows = lows, highs
        assert np.abs(highs - 0.75).max() <= 1e-4
        assert np.abs(lows - 3 * eps).max() <= 1e-4
    i1a = scn.user_ids.index("u1a")
    assert ne[i1a] == pytest.approx(9 / 16 + 3 * eps / 4, abs=1e-12)
    assert is_nash_equilibrium(scn, ne, delta=1e-6, tol=1e-6)


# ---------------------------------------------------------------------------
# 5. geometric decay without a weight floor


@criterion(5, "no fixed point at zero floor (1/3 decay pattern); floor "
              "1e-4 restores convergence")
def test_criterion_05_decay_counterexample():
    scn = decay_example()
    trace = brd_run(scn, delta=0.0, max_rounds=8, tol=1e-12)
    assert not trace.converged
    i1a = scn.user_ids.index("u1a")
    i2a = scn.user_ids.index("u2a")
    for n in range(1, 7):
        prev, cur = trace.weights_history[n], trace.weights_history[n + 1]
        assert cur[i1a] == pytest.approx(prev[i2a] / 3, rel=1e-5)
        assert cur[i2a] == pytest.approx(cur[i1a] / 3, rel=1e-5)
        assert cur[i1a] < prev[i1a]
    floored = brd_run(scn, delta=1e-4, max_rounds=60)
    assert floored.converged


# ---------------------------------------------------------------------------
# 6. contraction ratio, unique fixed point, asynchronous agreement


@criterion(6, "step-norm contraction, init-independent fixed point, and "
              "asynchronous agreement on 100 instances, < 60 s")
def test_criterion_06_contraction():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    checked = 0
    attempts = 0
    while checked < 100:
        attempts += 1
        assert attempts < 2_000
        scn = random_well_dimensioned(rng, max_slices=3, min_slices=3,
                                      fmin_cap=0.1)
        rep = contraction_bound(scn)
        if not rep.guaranteed:
            continue
        trace = policy_dynamics(scn, mode="sim", max_rounds=120)
        assert trace.converged
        for n in range(1, len(trace.step_norms)):
            if trace.step_norms[n - 1] < 1e-12:
                continue
            assert trace.step_norms[n] <= rep.ratio * trace.step_norms[n - 1] + 1e-12
        for init_seed in (1, 2):
            w0 = interior_weights(scn, np.random.default_rng([6, checked, init_seed]))
            other = policy_dynamics(scn, mode="sim", w0=w0, max_rounds=120)
            assert other.converged
            assert bid_norm(scn.local_bids(other.final),
                            scn.local_bids(trace.final)) < 1e-7
        sched = make_async_schedule(scn.n_slices, n_events=240,
                                    seed=checked, max_staleness=3)
        async_tr = policy_dynamics(scn, mode="async", schedule=sched)
        assert async_tr.converged
        assert bid_norm(scn.local_bids(async_tr.final),
                        scn.local_bids(trace.final)) < 1e-6
        checked += 1
    assert time.perf_counter() - t0 < 60.0


# ---------------------------------------------------------------------------
# 7. minimum rates hold on well-dimensioned scenarios


@criterion(7, "zero minimum-rate violations over 1,000 random "
              "well-dimensioned scenarios")
def test_criterion_07_minimum_rates():
    violations = 0
    for seed in range(1_000):
        rng = np.random.default_rng([7, seed])
        scn = random_well_dimensioned(rng)
        trace = policy_dynamics(scn, mode="rr", max_rounds=7)
        _, _, r = rates_for_weights(scn, trace.final)
        guarded = scn.gamma > 0
        violations += int((r[guarded] < scn.gamma[guarded] * (1 - 1e-9)).sum())
    assert violations == 0


# ---------------------------------------------------------------------------
# 8. all-elastic fixed point is socially optimal


def _small_elastic(rng, max_bs=6, max_users_per_slice=3):
    """Random all-elastic economy whose total budget fits under capacity
    (the regime where the fixed point is socially optimal)."""
    V = int(rng.integers(2, 5))
    B = int(rng.integers(1, max_bs + 1))
    bs = [f"b{i}" for i in range(B)]
    budgets = rng.random(V) + 0.2
    budgets = budgets / budgets.sum() * rng.uniform(0.5, 0.95)
    slices, users = [], []
    for v in range(V):
        parts = rng.random(B + 1) + 0.05
        parts = parts / parts.sum() * budgets[v]
        share_map = {bs[b]: float(parts[b]) for b in range(B)}
        slices.append((f"s{v}", share_map, float(parts[B]), 1.0))
        n_u = int(rng.integers(1, max_users_per_slice + 1))
        phi = rng.random(n_u) + 0.1
        phi = phi / phi.sum()
        for i in range(n_u):
            b = bs[int(rng.integers(0, B))]
            c = float(rng.uniform(1.0, 10.0))
            users.append((f"u{v}_{i}", f"s{v}", b, c, 0.0, float(phi[i])))
    return make_scenario(bs, slices, users)


@criterion(8, "all-elastic fixed-point rates match the social optimum "
              "(1e-4 relative); small instances match a grid oracle")
def test_criterion_08_elastic_social_equivalence():
    for seed in range(100):
        rng = np.random.default_rng([8, seed])
        scn = _small_elastic(rng)
        assert scn.n_slices <= 4 and scn.n_bs <= 6 and scn.n_users <= 12
        trace = policy_dynamics(scn, mode="rr")
        _, _, r_policy = rates_for_weights(scn, trace.final)
        w, _, _ = social_optimal(scn, delta=1e-9, n_starts=2)
        _, _, r_social = rates_for_weights(scn, w)
        assert r_social == pytest.approx(r_policy, rel=1e-4)

    # independent oracle on tiny single-BS instances
    oracle_checked = 0
    for attempt in range(500):
        rng = np.random.default_rng([8, 1, attempt])
        scn = _small_elastic(rng, max_bs=1, max_users_per_slice=2)
        if scn.n_users > 3:
            continue
        _, value, _ = social_optimal(scn, delta=1e-9, n_starts=2)
        oracle = single_bs_social_grid(scn, step=1e-3)
        assert value >= oracle - 1e-6
        assert value - oracle <= 0.02   # grid discretization slack
        oracle_checked += 1
        if oracle_checked >= 10:
            break
    assert oracle_checked >= 10


# ---------------------------------------------------------------------------
# 9. small-slice (1 + eps) weight bound


@criterion(9, "small-slice responses pass the two-sided (1+eps) bound for "
              "eps in {0.05, 0.1}")
def test_criterion_09_epsilon_bound():
    for eps in (0.05, 0.1):
        for big_w, tiny_w in ((0.55, 0.01), (0.5, 0.008), (0.6, 0.015)):
            share = eps * 2 * big_w * 0.18   # keep s_v well below eps * l_-v
            scn = make_scenario(
                bs=["b1", "b2"],
                slices=[("tiny", {"b1": share / 2, "b2": share / 2}, 0.0, 1.0),
                        ("big", {"b1": 0.6, "b2": 0.6}, 0.0, 1.0)],
                users=[("t1", "tiny", "b1", 1.0, 0.0, 0.5),
                       ("t2", "tiny", "b2", 1.0, 0.0, 0.5),
                       ("g1", "big", "b1", 1.0, 0.0, 0.5),
                       ("g2", "big", "b2", 1.0, 0.0, 0.5)],
            )
            weights = weights_by_id(scn, {"g1": big_w, "g2": big_w},
                                    default=tiny_w)
            v = scn.slice_ids.index("tiny")
            worst = verify_epsilon_best_response(scn, v, weights,
                                                 epsilon=eps, delta=1e-9)
            assert 1.0 <= worst < 1.0 + eps


# ---------------------------------------------------------------------------
# 10. gradient health


@criterion(10, "analytic gradients match central differences (1e-4 "
               "relative) at 100 interior points per family")
def test_criterion_10_gradients():
    families = {
        "elastic-social": dict(elastic_only=True, social=True),
        "elastic-slice": dict(elastic_only=True, social=False),
        "guarded-social": dict(elastic_only=False, social=True),
        "guarded-slice": dict(elastic_only=False, social=False),
    }
    for name, fam in families.items():
        checked = 0
        attempts = 0
        while checked < 100:
            attempts += 1
            assert attempts < 5_000, name
            rng = np.random.default_rng([10, hash(name) % 2**31, attempts])
            scn = random_well_dimensioned(rng, elastic_only=fam["elastic_only"],
                                          fmin_cap=0.1)
            w = interior_weights(scn, rng)
            if near_kink(scn, w):
                continue
            mask = None
            if not fam["social"]:
                mask = np.zeros(scn.n_slices, dtype=bool)
                mask[int(rng.integers(0, scn.n_slices))] = True
            base = objective_value(scn, w, mask, fam["social"])
            if not np.isfinite(base):
                continue
            # stay clear of the utility singularity at the minimum rate
            _, _, r = rates_for_weights(scn, w)
            margin = r - scn.gamma
            if (margin[scn.phi > 0] < 0.05 * r[scn.phi > 0]).any():
                continue
            grad = objective_gradient(scn, w, slice_mask=mask,
                                      social=fam["social"])
            ok = True
            for i in range(scn.n_users):
                h = 1e-6 * max(w[i], 1.0)
                wp, wm = w.copy(), w.copy()
                wp[i] += h
                wm[i] -= h
                vp = objective_value(scn, wp, mask, fam["social"])
                vm = objective_value(scn, wm, mask, fam["social"])
                if not (np.isfinite(vp) and np.isfinite(vm)):
                    ok = False
                    break
                fd = (vp - vm) / (2 * h)
                assert abs(grad[i] - fd) <= 1e-4 * max(abs(fd), abs(grad[i])) + 1e-7, name
            if ok:
                checked += 1


# ---------------------------------------------------------------------------
# 11. dimensioning oracle + empirical outage


@criterion(11, "Poisson dimensioning returns 0.30 for (lam=2, fmin=0.05, "
               "pmax=0.01); empirical outage <= 0.012 over 1e5 epochs")
def test_criterion_11_dimensioning():
    lam, q, p_max = 2.0, 0.05, 0.01
    share = dimension_share(lam, [q], p_max, seed=0)
    oracle = q * stats.poisson.ppf(1.0 - p_max, lam)
    assert oracle == pytest.approx(0.30, abs=1e-12)
    assert abs(share - 0.30) <= q + 1e-12
    assert abs(share - oracle) <= q + 1e-12
    rng = np.random.default_rng(11)
    counts = rng.poisson(lam, size=100_000)
    outage = float(np.mean(counts * q > share + 1e-12))
    assert outage <= 0.012


# ---------------------------------------------------------------------------
# 12 + 13. desk-scale sweep and figures


GRID = [0.4, 0.8, 1.2, 1.6]
SEEDS = [0, 1, 2, 3, 4]


@pytest.fixture(scope="session")
def desk_sweep(tmp_path_factory):
    base = ExperimentConfig(slices=(), sites=7, epochs=300, dim_epochs=100,
                            p_max=0.01)
    t0 = time.perf_counter()
    rows = sweep(base, "orthogonal", GRID, SEEDS,
                 family_kwargs={"users_per_slice": 40, "gamma_bps": 0.2e6})
    elapsed = time.perf_counter() - t0
    path = tmp_path_factory.mktemp("sweep") / "sweep_orthogonal.csv"
    path.write_text(rows_to_csv(rows))
    return rows, str(path), elapsed


@pytest.mark.slow
@criterion(12, "desk-scale trends: outage <= 0.01, growing share-split "
               "outage ratio, positive reservation gain, within 2% of "
               "the social reference, < 30 min")
def test_criterion_12_desk_scale_trends(desk_sweep):
    rows, _, elapsed = desk_sweep
    assert elapsed < 1800.0
    assert not any("error" in r for r in rows)
    by = {(r["elastic_share_total"], r["scheme"]): r for r in rows}
    ratios = []
    for point in GRID:
        greet = by[(point, "greet")]
        assert greet["p_outage"] <= 0.01
        ratio = by[(point, "scpf")]["p_outage"] / greet["p_outage"]
        assert ratio >= 1.0
        ratios.append(ratio)
        assert greet["utility"] - by[(point, "gps")]["utility"] > 0.0
        assert abs(greet["social_gap_rel"]) <= 0.02
    rho = stats.spearmanr(GRID, ratios).statistic
    assert rho > 0.8


@pytest.mark.slow
@criterion(13, "figures render all three sweep chart kinds from the "
               "desk-scale CSV, byte-stable on re-render")
def test_criterion_13_figures(desk_sweep, tmp_path):
    _, csv_path, _ = desk_sweep
    for kind in ("tradeoff", "outage-gain", "utility-gain"):
        first = tmp_path / f"{kind}.png"
        second = tmp_path / f"{kind}_again.png"
        render(FigureSpec(inputs=(csv_path,), kind=kind, output=str(first)))
        render(FigureSpec(inputs=(csv_path,), kind=kind, output=str(second)))
        assert first.stat().st_size > 0
        assert first.read_bytes() == second.read_bytes()
