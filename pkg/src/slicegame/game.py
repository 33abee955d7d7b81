"""Strategic layer: best responses, update dynamics, convergence diagnostics.

Three dynamic processes live here:

* best-response dynamics, where each slice in turn solves its own utility
  maximization against frozen competitor bids (projected-gradient solver);
* policy dynamics, where slices instead apply the lightweight share policy
  round (round-robin, simultaneous, or asynchronous with stale views);
* the social-optimum solver, a multi-start joint projected gradient on the
  network-wide share-weighted utility.

Convergence bookkeeping uses the norm  max over slices of the per-BS sum of
absolute local-bid changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .allocation import BidState, allocate_guarded, split_to_users
from .model import ValidatedScenario, check_well_dimensioned
from .policy import build_aggregate_view, min_weights, share_round

DEFAULT_TOL = 1e-8
KKT_TOL = 1e-7


class SolverError(RuntimeError):
    pass


class NonConverged(SolverError):
    def __init__(self, what: str, residual: float):
        self.residual = residual
        super().__init__(f"{what} did not converge (residual {residual:.3e})")


class Infeasible(SolverError):
    pass


class BoundViolated(AssertionError):
    def __init__(self, user_id: str, ratio: float):
        self.user_id = user_id
        self.ratio = ratio
        super().__init__(f"approximation bound violated for user {user_id!r}: ratio {ratio}")


# ---------------------------------------------------------------------------
# traces and reports


def bid_norm(l_new: np.ndarray, l_old: np.ndarray) -> float:
    """max over slices of the summed absolute per-BS local-bid change."""
    return float(np.abs(l_new - l_old).sum(axis=1).max())


@dataclass
class DynamicsTrace:
    mode: str
    weights_history: list = field(default_factory=list)   # per round, (U,) arrays
    step_norms: list = field(default_factory=list)        # per round (n >= 1)
    converged: bool = False
    cycle_detected: bool = False
    cycle_period: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.weights_history[-1]

    @property
    def rounds(self) -> int:
        """Rounds that actually moved the state (the trailing no-op round
        that certifies convergence is not counted)."""
        n = len(self.step_norms)
        while n > 0 and self.step_norms[n - 1] < DEFAULT_TOL:
            n -= 1
        return max(n, 1) if self.step_norms else 0

    def local_bid_history(self, scn: ValidatedScenario):
        return [scn.local_bids(w) for w in self.weights_history]


@dataclass(frozen=True)
class ContractionReport:
    f_max: float
    threshold: float
    ratio: float        # geometric rate bound, < 1 when guaranteed
    guaranteed: bool


def contraction_bound(scn: ValidatedScenario) -> ContractionReport:
    """Sufficient-condition check for geometric convergence of the policy
    dynamics: the largest per-group minimum-fraction sum against 1/(2V-1)."""
    V = scn.n_slices
    f_max = float(scn.fmin_vb.max()) if scn.fmin_vb.size else 0.0
    threshold = 1.0 / (2 * V - 1)
    ratio = 2.0 * (V - 1) * f_max / (1.0 - f_max) if f_max < 1.0 else np.inf
    return ContractionReport(f_max=f_max, threshold=threshold, ratio=ratio,
                             guaranteed=f_max < threshold)


# ---------------------------------------------------------------------------
# asynchronous schedules


@dataclass(frozen=True)
class AsyncSchedule:
    """Event list for asynchronous updates.

    events[n] = (slice indices updating at event n, lag matrix row per
    updating slice: lags[v][v'] = how many events stale slice v's view of
    slice v' is).  Staleness is bounded by ``max_staleness`` and every slice
    updates at least once in any ``window`` consecutive events.
    """

    n_slices: int
    events: tuple
    max_staleness: int
    window: int
    seed: int

    def __post_init__(self):
        last_seen = np.zeros(self.n_slices, dtype=int)
        for n, (updating, lags) in enumerate(self.events):
            if not updating:
                raise ValueError("empty update set")
            for v in updating:
                last_seen[v] = n + 1
                for lag in lags[v].values():
                    if not (0 <= lag <= self.max_staleness):
                        raise ValueError("staleness bound violated")
            stale_for = (n + 1) - last_seen
            if (stale_for >= self.window).any():
                raise ValueError(
                    f"slice starved beyond window {self.window} at event {n}")


def make_async_schedule(n_slices: int, n_events: int, seed: int = 0,
                        max_staleness: int = 3, window: int | None = None) -> AsyncSchedule:
    """Random event schedule with update rate ~1/2 per slice per event."""
    if window is None:
        window = 4 * n_slices
    rng = np.random.default_rng(seed)
    events = []
    last_seen = np.zeros(n_slices, dtype=int)
    for n in range(n_events):
        updating = [v for v in range(n_slices) if rng.random() < 0.5]
        # starvation guard: force any slice close to the window bound
        for v in range(n_slices):
            if (n + 1) - last_seen[v] >= window - 1 and v not in updating:
                updating.append(v)
        if not updating:
            updating = [int(rng.integers(0, n_slices))]
        updating = sorted(updating)
        lags = {}
        for v in updating:
            last_seen[v] = n + 1
            lags[v] = {v2: int(rng.integers(0, max_staleness + 1))
                       for v2 in range(n_slices) if v2 != v}
        events.append((tuple(updating), lags))
    return AsyncSchedule(n_slices=n_slices, events=tuple(events),
                         max_staleness=max_staleness, window=window, seed=seed)


# ---------------------------------------------------------------------------
# policy dynamics


def default_weights(scn: ValidatedScenario) -> np.ndarray:
    """Even within-slice spread of each slice's overall share."""
    counts = np.bincount(scn.u_slice, minlength=scn.n_slices).astype(float)
    per = np.where(counts > 0, scn.overall / np.where(counts > 0, counts, 1.0), 0.0)
    return per[scn.u_slice]


def policy_dynamics(scn: ValidatedScenario, mode: str = "rr",
                    w0: np.ndarray | None = None,
                    schedule: AsyncSchedule | None = None,
                    max_rounds: int = 50, tol: float = DEFAULT_TOL) -> DynamicsTrace:
    """Iterate the per-slice share policy to a fixed point.

    Modes: "rr" (slices update sequentially within a round), "sim" (all
    respond to the previous round's snapshot), "async" (schedule-driven,
    each update sees per-slice stale snapshots; one event = one round of
    bookkeeping).
    """
    if mode not in ("rr", "sim", "async"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "async" and schedule is None:
        schedule = make_async_schedule(scn.n_slices, max_rounds)

    w = default_weights(scn) if w0 is None else np.asarray(w0, dtype=float).copy()
    trace = DynamicsTrace(mode=mode)
    trace.weights_history.append(w.copy())
    history = [w.copy()]   # async: per-event snapshots
    l_prev = scn.local_bids(w)

    n_rounds = len(schedule.events) if mode == "async" else max_rounds
    quiet = 0   # async: consecutive events below tolerance
    for n in range(n_rounds):
        if mode == "rr":
            for v in range(scn.n_slices):
                view = build_aggregate_view(BidState(scn, w), v)
                w[scn.users_of[v]] = share_round(v, view, scn)
        elif mode == "sim":
            snapshot = BidState(scn, w.copy())
            for v in range(scn.n_slices):
                view = build_aggregate_view(snapshot, v)
                w[scn.users_of[v]] = share_round(v, view, scn)
        else:
            updating, lags = schedule.events[n]
            for v in updating:
                # compose the stale global state slice v sees
                w_seen = w.copy()
                for v2, lag in lags[v].items():
                    stale = history[max(len(history) - 1 - lag, 0)]
                    w_seen[scn.users_of[v2]] = stale[scn.users_of[v2]]
                view = build_aggregate_view(BidState(scn, w_seen), v)
                w[scn.users_of[v]] = share_round(v, view, scn)
            history.append(w.copy())

        l_now = scn.local_bids(w)
        trace.weights_history.append(w.copy())
        trace.step_norms.append(bid_norm(l_now, l_prev))
        l_prev = l_now
        if trace.step_norms[-1] < tol:
            if mode != "async":
                trace.converged = True
                break
            # one quiet event proves nothing: a single slice updating from
            # stale snapshots can sit still away from the fixed point.
            # Require a quiet stretch long enough that every slice updated
            # and every stale view it used was itself quiet.
            quiet += 1
            if quiet >= schedule.window + schedule.max_staleness:
                trace.converged = True
                break
        else:
            quiet = 0
    return trace


# ---------------------------------------------------------------------------
# allocation value / gradient machinery (shared by BR and social solvers)


def _fair_value(x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    log_mask = alpha == 1.0
    out[log_mask] = np.log(x[log_mask])
    p = 1.0 - alpha[~log_mask]
    out[~log_mask] = x[~log_mask] ** p / p
    return out


def objective_value(scn: ValidatedScenario, weights: np.ndarray,
                    slice_mask: np.ndarray | None = None,
                    social: bool = False) -> float:
    """Sum of priority-weighted user utilities; -inf below any minimum.

    ``slice_mask`` restricts the sum to users of selected slices;
    ``social`` multiplies each term by the slice's overall share.
    """
    _, _, r = _rates(scn, weights)
    sel = np.ones(scn.n_users, dtype=bool) if slice_mask is None else slice_mask[scn.u_slice]
    sel = sel & (scn.phi > 0)
    x = r[sel] - scn.gamma[sel]
    if (x <= 0).any():
        return -np.inf
    coeff = scn.phi[sel]
    if social:
        coeff = coeff * scn.overall[scn.u_slice[sel]]
    return float(np.dot(coeff, _fair_value(x, scn.alpha[scn.u_slice[sel]])))


def _rates(scn: ValidatedScenario, weights: np.ndarray):
    l = scn.local_bids(weights)
    f = allocate_guarded(l, scn.shares, scn.bs_ids)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(l > 0, f / np.where(l > 0, l, 1.0), 0.0)
    r = weights * scn.c * ratio[scn.u_slice, scn.u_bs]
    return l, f, r


def _alloc_jacobian(l: np.ndarray, s: np.ndarray) -> np.ndarray:
    """J[b, v, v'] = derivative of slice v's fraction at b w.r.t. slice v'
    local bid at b, under the guarded allocation."""
    V, B = l.shape
    J = np.zeros((B, V, V))
    t = l.sum(axis=0)
    for b in range(B):
        if t[b] <= 0:
            continue
        if t[b] <= 1.0:
            J[b] = (np.eye(V) * t[b] - l[:, b][:, None]) / t[b] ** 2
        else:
            over = l[:, b] >= s[:, b]
            delta = np.maximum(l[:, b] - s[:, b], 0.0)
            P = delta.sum()
            Q = 1.0 - np.minimum(s[:, b], l[:, b]).sum()
            for v in range(V):
                if not over[v]:
                    J[b, v, v] = 1.0
                    continue
                for v2 in range(V):
                    if not over[v2]:
                        J[b, v, v2] = -delta[v] / P
                    elif v2 == v:
                        J[b, v, v] = Q * (P - delta[v]) / P ** 2
                    else:
                        J[b, v, v2] = -delta[v] * Q / P ** 2
    return J


def objective_gradient(scn: ValidatedScenario, weights: np.ndarray,
                       slice_mask: np.ndarray | None = None,
                       social: bool = False) -> np.ndarray:
    """Analytic gradient of ``objective_value`` w.r.t. every user weight."""
    l, f, r = _rates(scn, weights)
    sel = np.ones(scn.n_users, dtype=bool) if slice_mask is None else slice_mask[scn.u_slice]
    x = r - scn.gamma
    g = np.zeros(scn.n_users)
    live = sel & (scn.phi > 0) & (x > 0)
    coeff = scn.phi[live]
    if social:
        coeff = coeff * scn.overall[scn.u_slice[live]]
    g[live] = coeff * x[live] ** (-scn.alpha[scn.u_slice[live]])

    # T[v, b] = sum over that group of g_u c_u w_u
    T = np.zeros_like(l)
    np.add.at(T, (scn.u_slice, scn.u_bs), g * scn.c * weights)

    J = _alloc_jacobian(l, scn.shares)
    with np.errstate(invalid="ignore", divide="ignore"):
        inv_l = np.where(l > 0, 1.0 / np.where(l > 0, l, 1.0), 0.0)
    # chain terms per (b, v'): sum_v T[v,b] * J[b,v,v'] / l[v,b]
    chain = np.einsum("vb,bvw,vb->wb", T, J, inv_l)
    ratio = f * inv_l

    grad = g * scn.c * ratio[scn.u_slice, scn.u_bs]
    grad += chain[scn.u_slice, scn.u_bs]
    grad -= (T * ratio * inv_l)[scn.u_slice, scn.u_bs]
    return grad


# ---------------------------------------------------------------------------
# feasible-set projection


def _project_capped(y: np.ndarray, lb: np.ndarray, budget: float) -> np.ndarray:
    """Euclidean projection onto {w >= lb, sum w <= budget}."""
    if lb.sum() > budget:
        # hairline overshoot from the moving-floor iteration is rescaled;
        # a real overshoot means the floors cannot fit in the budget
        if lb.sum() <= budget * (1 + 1e-7) + 1e-9:
            lb = lb * (budget / lb.sum())
        else:
            raise Infeasible(
                f"minimum weights {lb.sum():.6g} exceed the slice budget {budget:.6g}")
    w = np.maximum(y, lb)
    excess = w.sum() - budget
    if excess <= 0:
        return w
    # project (y - lb) onto the simplex of size budget - sum(lb)
    z = y - lb
    tau = budget - lb.sum()
    if tau <= 0:
        return lb.copy()
    u = np.sort(z)[::-1]
    css = np.cumsum(u) - tau
    ks = np.arange(1, len(z) + 1)
    valid = u - css / ks > 0
    k = ks[valid][-1]
    theta = css[k - 1] / k
    return lb + np.maximum(z - theta, 0.0)


def _rate_lower_bounds(scn: ValidatedScenario, v: int, weights: np.ndarray,
                       delta: float) -> np.ndarray:
    """Per-user weight floors for slice v that keep every minimum rate met,
    evaluated at the current global bid state."""
    users = scn.users_of[v]
    l = scn.local_bids(weights)
    t = l.sum(axis=0)
    # per-BS bid-to-fraction ratio rho for slice v under the three branches
    delta_all = np.maximum(l - scn.shares, 0.0)
    spare = 1.0 - np.minimum(l, scn.shares).sum(axis=0)
    dsum = delta_all.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        h = scn.shares[v] + np.where(dsum > 0, delta_all[v] / np.where(dsum > 0, dsum, 1.0) * spare, 0.0)
        rho_over = np.where(h > 0, l[v] / np.where(h > 0, h, 1.0), np.inf)
    rho = np.where(t <= 1.0, t, np.where(l[v] < scn.shares[v], 1.0, rho_over))
    return np.maximum(delta, scn.fmin[users] * rho[scn.u_bs[users]])


def _project_slice(scn: ValidatedScenario, v: int, weights: np.ndarray,
                   target: np.ndarray, delta: float,
                   iters: int = 60) -> np.ndarray:
    """Project slice v's block toward ``target`` while tracking the
    bid-dependent rate floors to their fixed point."""
    users = scn.users_of[v]
    w = weights.copy()
    # the floors depend on the slice's own bids, so iterate from the current
    # (feasible) block rather than from the unconstrained target
    block = w[users].copy()
    for _ in range(iters):
        w[users] = block
        lb = _rate_lower_bounds(scn, v, w, delta)
        new_block = _project_capped(target, lb, float(scn.overall[v]))
        if np.abs(new_block - block).max() < 1e-13:
            block = new_block
            break
        block = new_block
    w[users] = block
    return w


# ---------------------------------------------------------------------------
# best response


@dataclass
class SolveInfo:
    iterations: int
    residual: float
    value: float


def best_response(scn: ValidatedScenario, v: int, weights: np.ndarray,
                  delta: float = 0.0, max_iters: int = 400,
                  step_tol: float = 1e-11, kkt_tol: float = KKT_TOL,
                  strict: bool = False):
    """Utility-maximizing weights for slice v with all other bids frozen.

    Projected gradient ascent with Armijo backtracking over the convex set
    {w >= delta, sum <= budget, all own minimum rates met}.  Initialized at
    the share-policy response, which already satisfies the minimums.
    Returns (new global weights array, SolveInfo).
    """
    users = scn.users_of[v]
    mask = np.zeros(scn.n_slices, dtype=bool)
    mask[v] = True

    w = weights.astype(float).copy()
    view = build_aggregate_view(BidState(scn, w), v)
    w[users] = np.maximum(share_round(v, view, scn), delta)
    w = _project_slice(scn, v, w, w[users], delta)

    value = objective_value(scn, w, mask)
    step = 1.0
    it = 0
    for it in range(1, max_iters + 1):
        grad = objective_gradient(scn, w, mask)[users]
        moved = False
        for _ in range(40):
            cand = _project_slice(scn, v, w, w[users] + step * grad, delta)
            d = cand[users] - w[users]
            dnorm = np.abs(d).max()
            if dnorm < step_tol:
                break
            cand_val = objective_value(scn, cand, mask)
            if cand_val >= value + 1e-4 * float(np.dot(grad, d)):
                w, value = cand, cand_val
                moved = True
                step = min(step * 2.0, 1e3)
                break
            step *= 0.5
        if not moved:
            break

    # KKT residual in the projected-gradient norm (unit step)
    grad = objective_gradient(scn, w, mask)[users]
    probe = _project_slice(scn, v, w, w[users] + grad, delta)
    residual = float(np.abs(probe[users] - w[users]).max())
    if strict and residual > kkt_tol:
        raise NonConverged(f"best response of slice {scn.slice_ids[v]}", residual)

    # feasibility of minimum rates (restoration already built into the
    # projection; verify and fail loudly rather than silently clamp)
    _, _, r = _rates(scn, w)
    bad = (scn.u_slice == v) & (r < scn.gamma * (1 - 1e-9) - 1e-12)
    if bad.any():
        raise Infeasible(
            f"best response of slice {scn.slice_ids[v]} violates minimum rates")
    return w, SolveInfo(iterations=it, residual=residual, value=value)


def brd_run(scn: ValidatedScenario, order=None, delta: float = 1e-6,
            max_rounds: int = 50, w0: np.ndarray | None = None,
            tol: float = DEFAULT_TOL, cycle_tol: float = 1e-6) -> DynamicsTrace:
    """Sequential best-response dynamics with cycle detection.

    A cycle is reported when a round's end state revisits any earlier
    non-adjacent state within ``cycle_tol`` in the bid norm."""
    order = list(range(scn.n_slices)) if order is None else list(order)
    w = default_weights(scn) if w0 is None else np.asarray(w0, dtype=float).copy()
    trace = DynamicsTrace(mode="brd")
    trace.weights_history.append(w.copy())
    bid_states = [scn.local_bids(w)]

    for n in range(1, max_rounds + 1):
        for v in order:
            w, _ = best_response(scn, v, w, delta=delta)
        l_now = scn.local_bids(w)
        trace.weights_history.append(w.copy())
        trace.step_norms.append(bid_norm(l_now, bid_states[-1]))
        if trace.step_norms[-1] < tol:
            trace.converged = True
            break
        for m, l_old in enumerate(bid_states[:-1]):
            if bid_norm(l_now, l_old) < cycle_tol:
                trace.cycle_detected = True
                trace.cycle_period = n - m
                break
        bid_states.append(l_now)
        if trace.cycle_detected:
            break
    return trace


def is_nash_equilibrium(scn: ValidatedScenario, weights: np.ndarray,
                        delta: float = 1e-6, tol: float = 1e-6) -> bool:
    """Certificate: every slice's best response leaves its bids unchanged."""
    l0 = scn.local_bids(weights)
    for v in range(scn.n_slices):
        w_br, _ = best_response(scn, v, np.asarray(weights, dtype=float), delta=delta)
        if bid_norm(scn.local_bids(w_br), l0) > tol:
            return False
    return True


# ---------------------------------------------------------------------------
# social optimum


def social_optimal(scn: ValidatedScenario, delta: float = 0.0,
                   n_starts: int = 8, seed: int = 0, max_iters: int = 600,
                   step_tol: float = 1e-12, warm: np.ndarray | None = None):
    """Best-found maximizer of the share-weighted network utility.

    Joint projected gradient over all slices' weights with ``n_starts``
    multi-starts (the problem is not certified jointly convex; the best
    start is reported).  ``warm`` replaces the deterministic first start.
    Returns (weights, utility, SolveInfo).
    """
    if not check_well_dimensioned(scn).ok:
        raise Infeasible("social optimum requires well-dimensioned shares")
    rng = np.random.default_rng(seed)
    best_w, best_val, best_info = None, -np.inf, None

    for k in range(n_starts):
        if k == 0:
            w = warm.copy() if warm is not None else default_weights(scn)
        else:
            w = np.zeros(scn.n_users)
            for v in range(scn.n_slices):
                users = scn.users_of[v]
                raw = rng.random(len(users)) + 1e-3
                w[users] = raw / raw.sum() * scn.overall[v]
        for v in range(scn.n_slices):
            w = _project_slice(scn, v, w, w[scn.users_of[v]], delta)

        value = objective_value(scn, w, social=True)
        step = 1.0
        it = 0
        for it in range(1, max_iters + 1):
            grad = objective_gradient(scn, w, social=True)
            moved = False
            for _ in range(40):
                cand = w.copy()
                for v in range(scn.n_slices):
                    users = scn.users_of[v]
                    cand = _project_slice(scn, v, cand,
                                          w[users] + step * grad[users], delta)
                d = cand - w
                if np.abs(d).max() < step_tol:
                    break
                cand_val = objective_value(scn, cand, social=True)
                if cand_val >= value + 1e-4 * float(np.dot(grad, d)):
                    w, value = cand, cand_val
                    moved = True
                    step = min(step * 2.0, 1e3)
                    break
                step *= 0.5
            if not moved:
                break

        grad = objective_gradient(scn, w, social=True)
        probe = w.copy()
        for v in range(scn.n_slices):
            users = scn.users_of[v]
            probe = _project_slice(scn, v, probe, w[users] + grad[users], delta)
        residual = float(np.abs(probe - w).max())
        if value > best_val:
            best_w, best_val = w, value
            best_info = SolveInfo(iterations=it, residual=residual, value=value)

    return best_w, best_val, best_info


# ---------------------------------------------------------------------------
# policy-vs-best-response approximation bound


def verify_epsilon_best_response(scn: ValidatedScenario, v: int,
                                 weights: np.ndarray, epsilon: float,
                                 delta: float = 0.0) -> float:
    """Check the small-slice approximation bound between the policy response
    and the best response; returns the worst per-user ratio.

    Requires every user of the slice to be elastic, or every user to be
    inelastic; raises BoundViolated on the first user outside the two-sided
    (1 + epsilon) band.
    """
    users = scn.users_of[v]
    elastic = (scn.gamma[users] == 0)
    if not (elastic.all() or (~elastic).all()):
        raise ValueError("bound applies only to all-elastic or all-inelastic slices")

    others = BidState(scn, np.asarray(weights, dtype=float))
    lmv = others.bids_excluding(v)
    occupied = np.unique(scn.u_bs[users])
    small = scn.overall[v] / lmv[occupied]
    if not (small < epsilon).all():
        raise ValueError("slice share is not small against every outside bid")

    w_g = share_round(v, build_aggregate_view(others, v), scn)
    w_full, _ = best_response(scn, v, np.asarray(weights, dtype=float), delta=delta)
    w_br = w_full[users]

    worst = 1.0
    for j, u in enumerate(users):
        a, b = w_g[j], w_br[j]
        if a == 0 and b == 0:
            continue
        if a <= 0 or b <= 0:
            raise BoundViolated(scn.user_ids[u], np.inf)
        ratio = max(a / b, b / a)
        worst = max(worst, ratio)
        if not (b / (1 + epsilon) < a < (1 + epsilon) * b):
            raise BoundViolated(scn.user_ids[u], ratio)
    return worst
