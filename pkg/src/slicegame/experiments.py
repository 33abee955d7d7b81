"""Share dimensioning, benchmark mapping, and the sweep harness.

The pipeline mirrors a field study at desk scale: simulate user traces to
estimate per-sector load, dimension guaranteed shares against a Poisson
load model, then replay epochs under four allocation schemes (the guarded
market with the share policy, a per-BS reservation, a flat share split,
and a social-optimum reference) and aggregate outage and utility metrics.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .allocation import allocate_gps, allocate_scpf, rates_for_weights, split_to_users, BidState
from .model import ScenarioSpec, SliceProfile, UserRecord, validate_scenario
from .game import policy_dynamics, social_optimal
from .policy import build_aggregate_view, min_weights
from .radio import (
    ChannelParams, associate_and_rate, build_topology, default_mcs,
    init_mobility, make_hotspots, step_mobility,
)


class Undimensionable(ValueError):
    pass


class InfeasibleMapping(ValueError):
    pass


SCHEMES = ("greet", "gps", "scpf", "social")


# ---------------------------------------------------------------------------
# dimensioning


def dimension_share(lam: float, fmin_samples, p_max: float,
                    seed: int = 0, n_draws: int = 100_000) -> float:
    """Smallest share covering the Poisson-compounded minimum-fraction sum
    with outage probability at most p_max, by seeded Monte-Carlo.

    User count drawn Poisson(lam); each user's minimum fraction drawn from
    the empirical sample set.
    """
    if not (0.0 < p_max < 1.0):
        raise ValueError("p_max must be in (0, 1)")
    if lam < 0:
        raise ValueError("negative load")
    if lam == 0:
        return 0.0
    samples = np.asarray(fmin_samples, dtype=float)
    if samples.size == 0 or (samples < 0).any():
        raise ValueError("need nonnegative minimum-fraction samples")

    rng = np.random.default_rng([seed, 2**31 - 1])
    counts = rng.poisson(lam, size=n_draws)
    draws = rng.choice(samples, size=int(counts.sum()), replace=True)
    totals = np.zeros(n_draws)
    np.add.at(totals, np.repeat(np.arange(n_draws), counts), draws)
    # smallest realized total t with P(sum > t) <= p_max
    s = float(np.quantile(totals, 1.0 - p_max, method="inverted_cdf"))
    if s > 1.0:
        raise Undimensionable(f"required share {s:.4g} exceeds 1")
    return s


def dimension_shares(lams: np.ndarray, fmin_samples, p_max: float,
                     seed: int = 0, n_draws: int = 100_000) -> np.ndarray:
    """Per-(slice, BS) dimensioning; independent substreams per entry."""
    lams = np.asarray(lams, dtype=float)
    out = np.zeros_like(lams)
    for idx in np.ndindex(lams.shape):
        sub = seed * 1_000_003 + int(np.ravel_multi_index(idx, lams.shape))
        out[idx] = dimension_share(float(lams[idx]), fmin_samples, p_max,
                                   seed=sub, n_draws=n_draws)
    return out


# ---------------------------------------------------------------------------
# benchmark share mapping


def water_fill(demand: float, caps: np.ndarray) -> np.ndarray:
    """Max-min balanced split of ``demand`` under per-bin caps."""
    caps = np.asarray(caps, dtype=float)
    if demand > caps.sum() + 1e-12:
        raise InfeasibleMapping(
            f"demand {demand:.6g} exceeds total headroom {caps.sum():.6g}")
    if demand <= 0:
        return np.zeros_like(caps)
    lo, hi = 0.0, float(caps.max(initial=0.0))
    alloc = np.minimum(caps, hi)
    if alloc.sum() <= demand:
        return alloc
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.minimum(caps, mid).sum() < demand:
            lo = mid
        else:
            hi = mid
    alloc = np.minimum(caps, hi)
    # exactness: spread the residual over unsaturated bins
    open_bins = alloc < caps - 1e-15
    if open_bins.any():
        alloc[open_bins] += (demand - alloc.sum()) / open_bins.sum()
    return alloc


def map_benchmark_shares(shares: np.ndarray, excess: np.ndarray,
                         elastic: np.ndarray) -> np.ndarray:
    """Reservation shares for the per-BS benchmark.

    Guaranteed slices keep their shares; each elastic slice's excess budget
    is water-filled over the remaining per-BS headroom, in slice order.
    """
    res = np.asarray(shares, dtype=float).copy()
    headroom = 1.0 - res.sum(axis=0)
    for v in np.flatnonzero(elastic):
        fill = water_fill(float(excess[v]), np.maximum(headroom, 0.0))
        res[v] = fill
        headroom = headroom - fill
    return res


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass(frozen=True)
class SliceClassConfig:
    name: str
    kind: str                  # "guaranteed" | "elastic"
    n_users: int
    gamma_bps: float = 0.0     # per-user minimum rate; > 0 iff guaranteed
    mobility: str = "rwp"      # "rwp" | "hotspot"
    excess_share: float = 0.0  # elastic contention budget e^v

    def __post_init__(self):
        if self.kind not in ("guaranteed", "elastic"):
            raise ValueError(f"unknown slice kind {self.kind!r}")
        if self.kind == "guaranteed" and self.gamma_bps <= 0:
            raise ValueError("guaranteed slices need gamma > 0")
        if self.kind == "elastic" and self.gamma_bps != 0:
            raise ValueError("elastic slices must have gamma = 0")


@dataclass(frozen=True)
class ExperimentConfig:
    slices: tuple                   # of SliceClassConfig
    sites: int = 7
    isd_m: float = 20.0
    epochs: int = 300
    dim_epochs: int = 100           # trace samples for load estimation
    dim_stride: int = 10            # mobility seconds between trace samples
    seed: int = 0
    p_max: float = 0.01
    schemes: tuple = SCHEMES
    social_every: int = 10
    rounds_cap: int = 7
    dynamics_tol: float = 1e-8
    n_hotspot_clusters: int = 3
    mc_draws: int = 100_000


@dataclass
class SchemeMetrics:
    outage_epochs: int = 0          # guarded user-epochs below minimum
    guarded_epochs: int = 0
    utility_sum: float = 0.0
    utility_epochs: int = 0
    converged: int = 0
    rounds_sum: int = 0
    dynamics_runs: int = 0

    @property
    def p_outage(self) -> float:
        return self.outage_epochs / self.guarded_epochs if self.guarded_epochs else 0.0

    @property
    def utility(self) -> float:
        return self.utility_sum / self.utility_epochs if self.utility_epochs else math.nan

    @property
    def converged_frac(self) -> float:
        return self.converged / self.dynamics_runs if self.dynamics_runs else 1.0

    @property
    def rounds_mean(self) -> float:
        return self.rounds_sum / self.dynamics_runs if self.dynamics_runs else 0.0


@dataclass
class MetricsReport:
    per_scheme: dict                  # scheme -> SchemeMetrics
    shares: np.ndarray                # dimensioned (V, B)
    reservation: np.ndarray           # benchmark mapping (V, B)
    lams: np.ndarray                  # estimated per-(v, b) loads
    utilities_paired: dict = field(default_factory=dict)  # scheme -> per-epoch list


# ---------------------------------------------------------------------------
# the epoch simulator


class _Population:
    """Mobility and channel state for every configured user."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.topo = build_topology(cfg.sites, cfg.isd_m)
        self.region = self.topo.region()
        self.channel = ChannelParams()
        self.mcs = default_mcs()
        self.states = []
        self.user_slice = []
        rng = np.random.default_rng([cfg.seed, 0])
        shared_hotspots = None
        taken = []   # distinct-demand slices keep their clusters apart
        for k, sc in enumerate(cfg.slices):
            if sc.mobility == "hotspot":
                if sc.name.endswith("+shared"):
                    if shared_hotspots is None:
                        shared_hotspots = make_hotspots(
                            self.region, cfg.n_hotspot_clusters, rng)
                    centers, radius = shared_hotspots
                else:
                    centers, radius = make_hotspots(
                        self.region, cfg.n_hotspot_clusters, rng, avoid=taken)
                    taken.extend(centers)
            for i in range(sc.n_users):
                urng = np.random.default_rng([cfg.seed, 1, k, i])
                if sc.mobility == "hotspot":
                    st = init_mobility("hotspot", self.region, urng,
                                       clusters=centers, cluster_radius=radius)
                else:
                    st = init_mobility("rwp", self.region, urng)
                self.states.append(st)
                self.user_slice.append(k)
        self.n_users = len(self.states)

    def step_epoch(self, epoch: int):
        """Advance mobility 1 s and return (sector index, rate) per user."""
        cfg = self.cfg
        assoc = np.zeros(self.n_users, dtype=int)
        rates = np.zeros(self.n_users)
        for u in range(self.n_users):
            mrng = np.random.default_rng([cfg.seed, 2, u, epoch])
            self.states[u] = step_mobility(self.states[u], 1.0, self.region, mrng)
            assoc[u], rates[u] = associate_and_rate(
                self.topo, self.channel, self.mcs,
                self.states[u].position, cfg.seed, u, epoch)
        return assoc, rates


def _estimate_loads(pop: _Population, cfg: ExperimentConfig):
    """Run the trace phase: per-(slice, sector) mean guaranteed-user count,
    the pooled empirical minimum-fraction samples, and the per-sample
    requirement totals per group.

    Trace samples are thinned by ``dim_stride`` mobility seconds: slow
    mobility makes back-to-back epochs nearly identical, which would bias
    both the mean and the tail estimates.  Returns the epoch index where
    the measurement phase starts.
    """
    V, B = len(cfg.slices), pop.topo.n_sectors
    counts = np.zeros((V, B))
    totals = np.zeros((cfg.dim_epochs, V, B))
    fmins = []
    epoch = 0
    for k_sample in range(cfg.dim_epochs):
        for _ in range(cfg.dim_stride):
            assoc, rates = pop.step_epoch(epoch)
            epoch += 1
        for u in range(pop.n_users):
            k = pop.user_slice[u]
            sc = cfg.slices[k]
            if sc.kind != "guaranteed":
                continue
            counts[k, assoc[u]] += 1
            if rates[u] > 0:
                fm = min(sc.gamma_bps / rates[u], 1.0)
                fmins.append(fm)
                totals[k_sample, k, assoc[u]] += fm
    lams = counts / cfg.dim_epochs
    return (lams, np.array(fmins) if fmins else np.array([0.0]),
            totals, epoch)


def _epoch_scenario(cfg: ExperimentConfig, pop: _Population, shares: np.ndarray,
                    assoc: np.ndarray, rates: np.ndarray):
    """Build the validated scenario for one epoch snapshot.

    Users without coverage are excluded (guaranteed ones count as outages).
    Guaranteed groups are trimmed, largest minimum fraction first, until
    every per-sector requirement fits its dimensioned share, so the
    well-dimensioned assumption holds for every allocator; trimmed users
    also count as outages.
    """
    V = len(cfg.slices)
    bs_ids = pop.topo.sector_ids
    outage_users = []
    candidates = [[] for _ in range(V)]   # per slice: (user, bs, c)

    for u in range(pop.n_users):
        k = pop.user_slice[u]
        sc = cfg.slices[k]
        if rates[u] <= 0 or (sc.kind == "guaranteed"
                             and sc.gamma_bps / rates[u] > 1.0):
            if sc.kind == "guaranteed":
                outage_users.append(u)
            continue
        candidates[k].append((u, int(assoc[u]), float(rates[u])))

    # trim guaranteed groups to their dimensioned shares
    kept = [[] for _ in range(V)]
    for k, sc in enumerate(cfg.slices):
        if sc.kind != "guaranteed":
            kept[k] = candidates[k]
            continue
        by_bs = {}
        for item in candidates[k]:
            by_bs.setdefault(item[1], []).append(item)
        for b, items in by_bs.items():
            items.sort(key=lambda it: sc.gamma_bps / it[2])   # ascending fmin
            total = sum(sc.gamma_bps / it[2] for it in items)
            while items and total > shares[k, b]:
                drop = items.pop()
                total -= sc.gamma_bps / drop[2]
                outage_users.append(drop[0])
            kept[k].extend(items)

    profiles = []
    users = []
    for k, sc in enumerate(cfg.slices):
        share_map = {bs_ids[b]: float(shares[k, b])
                     for b in range(len(bs_ids)) if shares[k, b] > 0}
        profiles.append(SliceProfile(
            id=sc.name, guaranteed_shares=share_map,
            excess_share=float(sc.excess_share),
            overall_share=float(sum(share_map.values()) + sc.excess_share),
            alpha=1.0))
        n_k = len(kept[k])
        for (u, b, c) in kept[k]:
            gamma = sc.gamma_bps if sc.kind == "guaranteed" else 0.0
            phi = 0.0 if sc.kind == "guaranteed" else 1.0 / n_k
            users.append(UserRecord(id=f"u{u:04d}", slice_id=sc.name,
                                    bs_id=bs_ids[b], achievable_rate=c,
                                    min_rate=gamma, priority=phi))
    spec = ScenarioSpec(base_stations=list(bs_ids), slices=profiles, users=users)
    scn = validate_scenario(spec)
    user_index = {f"u{u:04d}": u for k in range(V) for (u, _, _) in kept[k]}
    return scn, user_index, outage_users


def _apply_guard_floor(scn, w):
    """Raise deficient guarded weights to the cheapest restoring bid.

    A guaranteed group alone at a sector sees zero outside bids, so both
    the policy and the reference solver can leave it at weight zero, which
    allocates nothing.  The repair uses the per-slice minimum-weight rule
    against the current bids, plus a tiny positive floor for the truly
    isolated case (any positive bid claims an uncontended sector).  Only
    users actually below their minimum are touched, so well-served sectors
    keep their allocation.
    """
    w = w.copy()
    # deficient slices can escalate each other's minimum bids (the branch
    # formulas depend on outside bids), so iterate to the joint fixed point
    for _ in range(60):
        _, _, r = rates_for_weights(scn, w)
        need = (scn.gamma > 0) & (r < scn.gamma * (1.0 - 1e-9))
        if not need.any():
            break
        for v in np.unique(scn.u_slice[need]):
            users = scn.users_of[v]
            view = build_aggregate_view(BidState(scn, w), v)
            profile = min_weights(v, view, scn)
            target = np.maximum(profile.w_min, scn.fmin[users] * 1e-9)
            sel = need[users]
            w[users[sel]] = np.maximum(w[users[sel]], target[sel])
    return w


def _greet_rates(cfg, scn):
    trace = policy_dynamics(scn, mode="rr", max_rounds=cfg.rounds_cap,
                            tol=cfg.dynamics_tol)
    w = _apply_guard_floor(scn, trace.final)
    _, _, r = rates_for_weights(scn, w)
    return r, trace, w


def _gps_rates(scn, reservation):
    active = np.zeros(scn.shares.shape, dtype=bool)
    active[scn.u_slice, scn.u_bs] = True
    f = allocate_gps(active, reservation, scn.bs_ids)
    counts = np.zeros(scn.shares.shape)
    np.add.at(counts, (scn.u_slice, scn.u_bs), 1.0)
    share_u = f[scn.u_slice, scn.u_bs] / counts[scn.u_slice, scn.u_bs]
    return share_u * scn.c


def _scpf_rates(scn):
    weights, f = allocate_scpf(scn, scn.overall)
    _, r = split_to_users(BidState(scn, weights), f)
    return r


def _social_rates(scn, warm_weights):
    w, _, _ = social_optimal(scn, delta=1e-9, n_starts=1, max_iters=150,
                             warm=warm_weights)
    # same isolated-sector guard as the policy scheme: guarded users carry a
    # zero gradient, so nothing stops the projection leaving them at a
    # near-zero weight where they face no contention
    w = _apply_guard_floor(scn, w)
    _, _, r = rates_for_weights(scn, w)
    return r


def run_experiment(cfg: ExperimentConfig) -> MetricsReport:
    """Full pipeline: trace phase, dimensioning, benchmark mapping, then the
    per-epoch allocation replay under every requested scheme."""
    pop = _Population(cfg)
    lams, fmin_samples, trace_totals, epoch0 = _estimate_loads(pop, cfg)
    shares = dimension_shares(lams, fmin_samples, cfg.p_max,
                              seed=cfg.seed, n_draws=cfg.mc_draws)
    # the Poisson count model under-covers: a fixed clustered population is
    # over-dispersed, so also floor each share at the empirical requirement
    # quantile observed in the trace phase
    floored = np.maximum(shares, np.quantile(
        trace_totals, 1.0 - cfg.p_max, axis=0, method="inverted_cdf"))
    for b in range(shares.shape[1]):
        base_total = shares[:, b].sum()
        if base_total > 1.0 + 1e-12:
            raise Undimensionable(
                f"sector {pop.topo.sector_ids[b]} over-committed after dimensioning")
        total = floored[:, b].sum()
        if total > 1.0:
            # the safety floor is best-effort: grant as much of the excess
            # over the Poisson shares as the sector capacity allows
            extra = floored[:, b] - shares[:, b]
            floored[:, b] = shares[:, b] + extra * (1.0 - base_total) / extra.sum()
    shares = floored
    elastic = np.array([sc.kind == "elastic" for sc in cfg.slices])
    excess = np.array([sc.excess_share for sc in cfg.slices])
    reservation = map_benchmark_shares(shares, excess, elastic)
    # scenario compilation sorts slices by id; align the reservation rows
    order = np.argsort([sc.name for sc in cfg.slices], kind="stable")
    reservation_sorted = reservation[order]

    metrics = {s: SchemeMetrics() for s in cfg.schemes}
    paired = {s: [] for s in cfg.schemes}

    for epoch in range(epoch0, epoch0 + cfg.epochs):
        assoc, rates = pop.step_epoch(epoch)
        scn, user_index, pre_outage = _epoch_scenario(cfg, pop, shares, assoc, rates)

        do_social = ("social" in cfg.schemes
                     and (epoch - epoch0) % cfg.social_every == 0)
        # canonical evaluation order: metrics must not depend on the order
        # schemes were requested in (and the reference warm-starts from the
        # dynamics fixed point when both run)
        epoch_schemes = [s for s in SCHEMES if s in cfg.schemes
                         and (s != "social" or do_social)]

        rates_by_scheme = {}
        greet_weights = None
        for s in epoch_schemes:
            if s == "greet":
                r, trace, greet_weights = _greet_rates(cfg, scn)
                metrics[s].converged += trace.converged
                metrics[s].rounds_sum += trace.rounds
                metrics[s].dynamics_runs += 1
            elif s == "gps":
                r = _gps_rates(scn, reservation_sorted)
            elif s == "scpf":
                r = _scpf_rates(scn)
            else:
                r = _social_rates(scn, greet_weights)
            rates_by_scheme[s] = r

        # outage: guarded users below minimum, plus the pre-excluded ones
        guarded = scn.gamma > 0
        n_guarded_total = int(guarded.sum()) + len(pre_outage)
        for s in epoch_schemes:
            r = rates_by_scheme[s]
            below = (r[guarded] < scn.gamma[guarded] * (1 - 1e-6)).sum()
            metrics[s].outage_epochs += int(below) + len(pre_outage)
            metrics[s].guarded_epochs += n_guarded_total

        # utility on the common satisfied set across this epoch's schemes
        ok = np.ones(scn.n_users, dtype=bool)
        for s in epoch_schemes:
            r = rates_by_scheme[s]
            ok &= r > scn.gamma * (1 + 1e-12)
        included = np.flatnonzero(ok)
        for s in epoch_schemes:
            r = rates_by_scheme[s]
            util = _fast_utility(scn, r, included)
            metrics[s].utility_sum += util
            metrics[s].utility_epochs += 1
            # paired lists stay aligned: only record epochs where every
            # requested scheme ran
            if len(epoch_schemes) == len(cfg.schemes):
                paired[s].append(util)

    return MetricsReport(per_scheme=metrics, shares=shares,
                         reservation=reservation, lams=lams,
                         utilities_paired=paired)


def _fast_utility(scn, r, included):
    """Share-weighted log-utility over the included users (all alpha = 1
    here; guarded users contribute zero above their minimum)."""
    idx = included[scn.phi[included] > 0]
    if idx.size == 0:
        return 0.0
    x = r[idx] - scn.gamma[idx]
    return float(np.dot(scn.overall[scn.u_slice[idx]] * scn.phi[idx], np.log(x)))


# ---------------------------------------------------------------------------
# sweep

CSV_HEADER = ["family", "elastic_share_total", "scheme", "seed", "p_outage",
              "utility", "converged_frac", "rounds_mean", "ci_low", "ci_high"]

FAMILIES = ("uniform", "aligned", "orthogonal", "mixed")


def family_slices(family: str, n_guaranteed: int = 2, n_elastic: int = 2,
                  users_per_slice: int = 40, gamma_bps: float = 0.2e6,
                  elastic_share_total: float = 1.0) -> tuple:
    """Slice-class presets differing in guaranteed-traffic load shape:
    uniform (all waypoint mobility), aligned (clustered, shared hotspots),
    orthogonal (clustered, per-slice hotspots), mixed (one of each)."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    slices = []
    for g in range(n_guaranteed):
        if family == "uniform":
            mobility, tag = "rwp", ""
        elif family == "aligned":
            mobility, tag = "hotspot", "+shared"
        elif family == "orthogonal":
            mobility, tag = "hotspot", ""
        else:
            mobility, tag = ("hotspot", "") if g % 2 == 0 else ("rwp", "")
        slices.append(SliceClassConfig(
            name=f"g{g}{tag}", kind="guaranteed", n_users=users_per_slice,
            gamma_bps=gamma_bps, mobility=mobility))
    for e in range(n_elastic):
        slices.append(SliceClassConfig(
            name=f"e{e}", kind="elastic", n_users=users_per_slice,
            mobility="rwp", excess_share=elastic_share_total / n_elastic))
    return tuple(slices)


def _run_cell(cfg: ExperimentConfig):
    try:
        return run_experiment(cfg), None
    except Exception as exc:  # noqa: BLE001 - recorded per row
        return None, f"{type(exc).__name__}: {exc}"


def sweep(base_cfg: ExperimentConfig, family: str, elastic_grid, seeds,
          on_error: str = "record", family_kwargs: dict | None = None,
          jobs: int = 1) -> list:
    """One row per (grid point, scheme): seed-aggregated metrics with a 95%
    normal-approximation confidence interval on the utility.

    Cells (grid point x seed) are independent; ``jobs`` > 1 farms them out
    to worker processes, with results merged in deterministic cell order.
    """
    family_kwargs = family_kwargs or {}
    cfgs = [replace(base_cfg, seed=seed,
                    slices=family_slices(family, elastic_share_total=float(point),
                                         **family_kwargs))
            for point in elastic_grid for seed in seeds]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, cfgs))
    else:
        results = [_run_cell(cfg) for cfg in cfgs]

    rows = []
    for gi, point in enumerate(elastic_grid):
        per_scheme = {s: [] for s in base_cfg.schemes}
        social_gaps = []
        failed = False
        for si in range(len(seeds)):
            report, err = results[gi * len(seeds) + si]
            if err is not None:
                if on_error != "record":
                    cls, _, msg = err.partition(": ")
                    exc_type = globals().get(cls, RuntimeError)
                    raise exc_type(msg)
                failed = True
                failure = err
                break
            for s in base_cfg.schemes:
                per_scheme[s].append(report.per_scheme[s])
            paired = report.utilities_paired
            if paired.get("greet") and paired.get("social"):
                gm = float(np.mean(paired["greet"]))
                sm = float(np.mean(paired["social"]))
                social_gaps.append((gm - sm) / abs(sm))
        for s in base_cfg.schemes:
            if failed:
                rows.append({"family": family, "elastic_share_total": point,
                             "scheme": s, "seed": seeds[0], "p_outage": math.nan,
                             "utility": math.nan, "converged_frac": math.nan,
                             "rounds_mean": math.nan, "ci_low": math.nan,
                             "ci_high": math.nan, "error": failure})
                continue
            ms = per_scheme[s]
            utils = np.array([m.utility for m in ms])
            mean = float(utils.mean())
            if len(utils) > 1:
                half = 1.96 * float(utils.std(ddof=1)) / math.sqrt(len(utils))
            else:
                half = 0.0
            row = {
                "family": family, "elastic_share_total": point, "scheme": s,
                "seed": seeds[0],
                "p_outage": float(np.mean([m.p_outage for m in ms])),
                "utility": mean,
                "converged_frac": float(np.mean([m.converged_frac for m in ms])),
                "rounds_mean": float(np.mean([m.rounds_mean for m in ms])),
                "ci_low": mean - half, "ci_high": mean + half,
            }
            if s == "greet" and social_gaps:
                # paired epoch comparison; the plain utility columns average
                # different epoch subsets for the reference scheme
                row["social_gap_rel"] = float(np.mean(social_gaps))
            rows.append(row)
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([
            row["family"], f"{row['elastic_share_total']:g}", row["scheme"],
            row["seed"], f"{row['p_outage']:.6g}", f"{row['utility']:.6g}",
            f"{row['converged_frac']:.6g}", f"{row['rounds_mean']:.6g}",
            f"{row['ci_low']:.6g}", f"{row['ci_high']:.6g}"])
    return buf.getvalue()
