"""Slice-level resource allocation schemes.

The main mechanism (``allocate_guarded``) is a constrained proportional-bid
market: when a base station's total bid is at most 1 every slice gets its
proportional cut; when bids exceed capacity, slices bidding below their
guaranteed share receive their bid untouched, and the rest split the spare
capacity in proportion to their bids above the guarantee.  Two benchmark
schemes (per-BS weighted reservation and flat share-based splitting) share
the same output shape so that downstream metrics treat them uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ValidatedScenario

BUDGET_ATOL = 1e-9


class AllocationError(RuntimeError):
    pass


class DegenerateResource(AllocationError):
    def __init__(self, bs: str, detail: str = "no active bids"):
        self.bs = bs
        super().__init__(f"degenerate resource at BS {bs!r}: {detail}")


class ZeroBidSlice(AllocationError):
    def __init__(self, slice_id: str, bs: str):
        super().__init__(
            f"slice {slice_id!r} holds a positive fraction at BS {bs!r} with zero bid")


@dataclass(frozen=True)
class BidState:
    """Per-user weights plus the scenario they refer to.

    Everything else (local bids, totals, excess bids) is derived on access
    so it can never go stale.
    """

    scn: ValidatedScenario
    weights: np.ndarray   # (U,), nonnegative

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if (w < 0).any():
            raise ValueError("negative user weight")
        object.__setattr__(self, "weights", w)

    @property
    def local_bids(self) -> np.ndarray:
        """(V, B) aggregate bid of each slice at each BS."""
        return self.scn.local_bids(self.weights)

    @property
    def totals(self) -> np.ndarray:
        """(B,) total bid per BS."""
        return self.local_bids.sum(axis=0)

    def bids_excluding(self, v: int) -> np.ndarray:
        """(B,) total bid per BS from all slices other than v."""
        l = self.local_bids
        return l.sum(axis=0) - l[v]

    @property
    def excess_bids(self) -> np.ndarray:
        """(V, B) positive part of local bids above guaranteed shares."""
        return np.maximum(self.local_bids - self.scn.shares, 0.0)

    def check_budgets(self) -> None:
        sums = np.zeros(self.scn.n_slices)
        np.add.at(sums, self.scn.u_slice, self.weights)
        bad = sums > self.scn.overall + BUDGET_ATOL
        if bad.any():
            v = int(np.flatnonzero(bad)[0])
            raise ValueError(
                f"slice {self.scn.slice_ids[v]!r} weights sum to {sums[v]}, "
                f"budget is {self.scn.overall[v]}")


def allocate_guarded(local_bids: np.ndarray, shares: np.ndarray,
                     bs_ids=None) -> np.ndarray:
    """Guarantee-protected market allocation: per-BS slice fractions.

    local_bids, shares: (V, B).  A BS with zero total bid is left idle
    (all fractions zero).  On an overloaded BS at least one slice must bid
    above its guarantee whenever guarantees do not over-commit; this is
    asserted rather than assumed.
    """
    l = np.asarray(local_bids, dtype=float)
    s = np.asarray(shares, dtype=float)
    f = np.zeros_like(l)
    lb = l.sum(axis=0)

    under = (lb > 0) & (lb <= 1.0)
    if under.any():
        f[:, under] = l[:, under] / lb[under]

    over = lb > 1.0
    if over.any():
        lo = l[:, over]
        so = s[:, over]
        delta = np.maximum(lo - so, 0.0)
        dsum = delta.sum(axis=0)
        if (dsum <= 0).any():
            b = int(np.flatnonzero(over)[np.flatnonzero(dsum <= 0)[0]])
            name = bs_ids[b] if bs_ids is not None else str(b)
            raise DegenerateResource(name, "overloaded BS with no excess bid")
        spare = 1.0 - np.minimum(so, lo).sum(axis=0)
        f[:, over] = np.where(lo < so, lo, so + delta / dsum * spare)
    return f


def split_to_users(bids: BidState, slice_fractions: np.ndarray):
    """Divide each slice's per-BS fraction over its users by weight.

    Returns (f_u, r_u) arrays over users.  A positive slice fraction with a
    zero aggregate bid has no defined split and is an error.
    """
    scn = bids.scn
    l = bids.local_bids
    bad = (slice_fractions > 0) & (l <= 0)
    if bad.any():
        v, b = map(int, np.argwhere(bad)[0])
        raise ZeroBidSlice(scn.slice_ids[v], scn.bs_ids[b])

    group_bid = l[scn.u_slice, scn.u_bs]
    group_frac = slice_fractions[scn.u_slice, scn.u_bs]
    with np.errstate(invalid="ignore"):
        f_u = np.where(group_bid > 0, bids.weights / np.where(group_bid > 0, group_bid, 1.0) * group_frac, 0.0)
    return f_u, f_u * scn.c


def rates_for_weights(scn: ValidatedScenario, weights: np.ndarray):
    """Convenience: weights -> (slice fractions, user fractions, user rates)."""
    bids = BidState(scn, weights)
    f_vb = allocate_guarded(bids.local_bids, scn.shares, scn.bs_ids)
    f_u, r_u = split_to_users(bids, f_vb)
    return f_vb, f_u, r_u


def allocate_gps(active: np.ndarray, reserved_shares: np.ndarray,
                 bs_ids=None) -> np.ndarray:
    """Reservation benchmark: per-BS split proportional to reserved shares.

    active: (V, B) bool, a slice is active at a BS when it has at least one
    associated user there.  Inactive slices get zero; a BS whose active
    slices all hold zero reservation is degenerate.
    """
    s = np.where(active, reserved_shares, 0.0)
    totals = s.sum(axis=0)
    occupied = active.any(axis=0)
    dead = occupied & (totals <= 0)
    if dead.any():
        b = int(np.flatnonzero(dead)[0])
        name = bs_ids[b] if bs_ids is not None else str(b)
        raise DegenerateResource(name, "active slices hold zero reservation")
    f = np.zeros_like(s)
    f[:, occupied] = s[:, occupied] / totals[occupied]
    return f


def allocate_scpf(scn: ValidatedScenario, overall_shares: np.ndarray):
    """Share-based benchmark: equal per-user weights, plain proportional split.

    Each slice spreads its overall share equally over all its users; every
    BS is then divided in proportion to aggregated weights with no guarantee
    protection (the proportional rule applied unconditionally).

    Returns (per-user weights, per-(slice, BS) fractions).
    """
    counts = np.bincount(scn.u_slice, minlength=scn.n_slices).astype(float)
    per_user = np.where(counts > 0, overall_shares / np.where(counts > 0, counts, 1.0), 0.0)
    weights = per_user[scn.u_slice]
    l = scn.local_bids(weights)
    lb = l.sum(axis=0)
    f = np.zeros_like(l)
    live = lb > 0
    f[:, live] = l[:, live] / lb[live]
    return weights, f
