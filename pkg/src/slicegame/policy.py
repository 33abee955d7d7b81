"""Per-slice share allocation policy.

Each slice, seeing only three aggregates about the competition at every BS
(total outside bid, outside excess-bid mass, outside guarantee-capped bid
mass), computes the minimum weight each of its users needs to hit its
minimum rate under the guarded allocation, then spreads any remaining
budget by user priority.  If even the minimum weights do not fit in the
budget, it serves as many users as possible, cheapest first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .allocation import BidState
from .model import ValidatedScenario


class DivergentRequirement(RuntimeError):
    """Minimum-rate demand at a BS cannot be met for any finite bid."""

    def __init__(self, bs: str, detail: str):
        self.bs = bs
        super().__init__(f"unsatisfiable minimum at BS {bs!r}: {detail}")


@dataclass(frozen=True)
class AggregateView:
    """What a slice is allowed to observe about all other slices, per BS."""

    others_bid: np.ndarray          # (B,) total outside local bid
    others_excess: np.ndarray       # (B,) sum of outside bids above guarantees
    others_guarded_min: np.ndarray  # (B,) sum of min(guarantee, bid) outside

    def __post_init__(self):
        for name in ("others_bid", "others_excess", "others_guarded_min"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if (arr < -1e-12).any():
                raise ValueError(f"{name} must be nonnegative")
            object.__setattr__(self, name, np.maximum(arr, 0.0))


@dataclass(frozen=True)
class MinWeightProfile:
    """Minimum weights for one slice's users, with per-BS aggregates."""

    users: np.ndarray          # user indices this profile covers
    w_min: np.ndarray          # aligned with ``users``
    fmin_b: np.ndarray         # (B,) summed minimum fractions of the slice
    min_local_bid: np.ndarray  # (B,) summed minimum weights of the slice


def build_aggregate_view(bids: BidState, v: int) -> AggregateView:
    """Materialize the three per-BS aggregates slice v is entitled to see."""
    scn = bids.scn
    l = bids.local_bids
    delta = np.maximum(l - scn.shares, 0.0)
    capped = np.minimum(scn.shares, l)
    return AggregateView(
        others_bid=l.sum(axis=0) - l[v],
        others_excess=delta.sum(axis=0) - delta[v],
        others_guarded_min=capped.sum(axis=0) - capped[v],
    )


def min_weights(v: int, view: AggregateView, scn: ValidatedScenario) -> MinWeightProfile:
    """Per-user minimum weights for slice v against the observed aggregates.

    Three regimes per BS: (a) total demand fits under capacity, so the
    proportional rule applies and the minimum bid is the one whose
    proportional cut equals the required fraction; (b) overloaded but the
    guarantee covers the requirement, so bidding the bare fraction suffices;
    (c) overloaded with an insufficient guarantee, where the minimum bid is
    backed out of the excess-redistribution formula.
    """
    users = scn.users_of[v]
    fmin_b = scn.fmin_vb[v]
    w_min = np.zeros(len(users))

    # per-BS minimum local bid, then spread over users proportionally to fmin
    bid_b = np.zeros(scn.n_bs)
    for b in np.unique(scn.u_bs[users]):
        fvb = fmin_b[b]
        if fvb == 0.0:
            continue
        if view.others_bid[b] + fvb <= 1.0:
            if fvb >= 1.0:
                raise DivergentRequirement(
                    scn.bs_ids[b], f"aggregate minimum fraction {fvb} >= 1")
            bid_b[b] = fvb / (1.0 - fvb) * view.others_bid[b]
        elif scn.shares[v, b] >= fvb:
            bid_b[b] = fvb
        else:
            denom = 1.0 - fvb - view.others_guarded_min[b]
            if denom <= 0.0:
                raise DivergentRequirement(
                    scn.bs_ids[b],
                    f"requirement {fvb} plus outside guarantees exhausts capacity")
            s_vb = scn.shares[v, b]
            bid_b[b] = s_vb + (fvb - s_vb) * view.others_excess[b] / denom

    for j, u in enumerate(users):
        b = scn.u_bs[u]
        if fmin_b[b] > 0:
            w_min[j] = scn.fmin[u] / fmin_b[b] * bid_b[b]

    return MinWeightProfile(users=users, w_min=w_min, fmin_b=fmin_b,
                            min_local_bid=bid_b)


def self_fractions(v: int, view: AggregateView, scn: ValidatedScenario,
                   w: np.ndarray) -> np.ndarray:
    """Exact per-user resource fractions of slice v's users from its own
    weights plus the observed aggregates (same arithmetic as the global
    allocation, computable without seeing individual competitors)."""
    users = scn.users_of[v]
    own_b = np.zeros(scn.n_bs)
    np.add.at(own_b, scn.u_bs[users], w)
    lb = view.others_bid + own_b
    s_b = scn.shares[v]
    delta_own = np.maximum(own_b - s_b, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        f_under = np.where(lb > 0, own_b / np.where(lb > 0, lb, 1.0), 0.0)
        denom = delta_own + view.others_excess
        spare = 1.0 - np.minimum(own_b, s_b) - view.others_guarded_min
        f_over = np.where(
            own_b < s_b, own_b,
            s_b + np.where(denom > 0, delta_own / np.where(denom > 0, denom, 1.0), 0.0) * spare)
        f_b = np.where(lb <= 1.0, f_under, f_over)
        f_u = np.where(own_b[scn.u_bs[users]] > 0,
                       w / np.where(own_b[scn.u_bs[users]] > 0,
                                    own_b[scn.u_bs[users]], 1.0)
                       * f_b[scn.u_bs[users]], 0.0)
    return f_u


def share_round(v: int, view: AggregateView, scn: ValidatedScenario) -> np.ndarray:
    """One policy update for slice v: weights for its users (aligned with
    ``scn.users_of[v]``).

    Feasible case: everyone gets their minimum, surplus goes out by
    priority.  The closed-form minimum weights ignore the slice's own
    surplus mass, which dilutes its guaranteed users at any BS it shares
    with them, so the round iterates minimum scaling against an exact
    self-evaluation of the resulting allocation until every reachable
    minimum holds.  Infeasible case: grant minimum weights greedily in
    order of increasing minimum weight (ties broken by user id) until the
    budget runs out; unserved users get zero.
    """
    profile = min_weights(v, view, scn)
    users = profile.users
    w_min = profile.w_min.copy()
    budget = scn.overall[v]
    fmin_u = scn.fmin[users]

    for _ in range(200):
        total_min = w_min.sum()
        if total_min <= budget:
            w = w_min + scn.phi[users] * (budget - total_min)
            f_u = self_fractions(v, view, scn, w)
            served = np.ones(len(users), dtype=bool)
        else:
            order = sorted(range(len(users)),
                           key=lambda j: (w_min[j], scn.user_ids[users[j]]))
            w = np.zeros(len(users))
            served = np.zeros(len(users), dtype=bool)
            spent = 0.0
            for j in order:
                if spent + w_min[j] <= budget:
                    w[j] = w_min[j]
                    served[j] = True
                    spent += w_min[j]
            f_u = self_fractions(v, view, scn, w)
        short = served & (fmin_u > 0) & (f_u < fmin_u * (1.0 - 1e-13))
        if not short.any():
            return w
        # proportional-response style rescale; lifts converge monotonically
        pos = short & (w > 0)
        w_min[pos] = w[pos] * fmin_u[pos] / f_u[pos]
        zero = short & (w <= 0)
        w_min[zero] = np.maximum(w_min[zero], fmin_u[zero])
    return w
