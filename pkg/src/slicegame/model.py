"""Domain model: scenarios, validation, utilities, dimensioning check.

A scenario describes a set of base stations (sectors), a set of slices
holding guaranteed per-BS shares plus an excess share, and a population of
users, each associated with one slice and one BS.  Everything downstream
(allocation, share policies, dynamics, experiments) consumes the compiled
array form produced by ``validate_scenario``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SHARE_RTOL = 1e-12      # relative tolerance for share-consistency checks
PRIORITY_ATOL = 1e-9    # absolute tolerance on per-slice priority sums


class MinusInfinity:
    """Explicit sentinel for utility below the minimum-rate cliff.

    Kept out of float arithmetic on purpose: it compares smaller than every
    real and equal only to itself.
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __lt__(self, other):
        return not isinstance(other, MinusInfinity)

    def __le__(self, other):
        return True

    def __gt__(self, other):
        return False

    def __ge__(self, other):
        return isinstance(other, MinusInfinity)

    def __eq__(self, other):
        return isinstance(other, MinusInfinity)

    def __hash__(self):
        return hash("MinusInfinity")

    def __repr__(self):
        return "NEG_UTILITY"

    def __add__(self, other):
        return self

    __radd__ = __add__

    def __mul__(self, other):
        return self

    __rmul__ = __mul__


NEG_UTILITY = MinusInfinity()


class TrafficClass(Enum):
    ELASTIC = "elastic"            # gamma = 0, phi > 0
    INELASTIC = "inelastic"        # gamma > 0, phi = 0
    RATE_ADAPTIVE = "rate_adaptive"  # gamma > 0, phi > 0


def traffic_class(gamma: float, phi: float) -> TrafficClass:
    """Classify a user from its (minimum rate, priority) pair.

    A user with gamma = 0 and phi = 0 has no defined class; such users are
    rejected at validation.
    """
    if gamma == 0 and phi > 0:
        return TrafficClass.ELASTIC
    if gamma > 0 and phi == 0:
        return TrafficClass.INELASTIC
    if gamma > 0 and phi > 0:
        return TrafficClass.RATE_ADAPTIVE
    raise ValueError("user with gamma = 0 and phi = 0 has no traffic class")


@dataclass(frozen=True)
class SliceProfile:
    id: str
    guaranteed_shares: dict[str, float]   # BS id -> share in [0, 1]
    excess_share: float
    overall_share: float
    alpha: float = 1.0


@dataclass(frozen=True)
class UserRecord:
    id: str
    slice_id: str
    bs_id: str
    achievable_rate: float   # c_u, bits/s, > 0
    min_rate: float = 0.0    # gamma_u, bits/s
    priority: float = 0.0    # phi_u

    @property
    def min_fraction(self) -> float:
        return self.min_rate / self.achievable_rate


@dataclass(frozen=True)
class ScenarioSpec:
    base_stations: list[str]
    slices: list[SliceProfile]
    users: list[UserRecord]
    weight_floor_delta: float = 0.0


@dataclass(frozen=True)
class UtilityParams:
    phi: float
    gamma: float
    alpha: float

    @property
    def traffic_class(self) -> TrafficClass:
        return traffic_class(self.gamma, self.phi)


@dataclass(frozen=True)
class ValidationIssue:
    kind: str      # OverCommitted | ShareMismatch | PriorityMismatch | DanglingReference | BadUser
    subject: str
    detail: str

    def __str__(self):
        return f"{self.kind}({self.subject}): {self.detail}"


class ValidationError(ValueError):
    def __init__(self, issues: list[ValidationIssue]):
        self.issues = issues
        super().__init__("; ".join(str(i) for i in issues))


@dataclass
class ValidatedScenario:
    """Compiled, array-backed view of a scenario that passed validation.

    Index conventions: slices and base stations are sorted by id; users keep
    their spec order.  All downstream numerics operate on these arrays.
    """

    spec: ScenarioSpec
    bs_ids: list[str]
    slice_ids: list[str]
    user_ids: list[str]
    shares: np.ndarray         # (V, B) guaranteed shares s^v_b
    excess: np.ndarray         # (V,)  e^v
    overall: np.ndarray        # (V,)  s^v
    alpha: np.ndarray          # (V,)
    u_slice: np.ndarray        # (U,) slice index per user
    u_bs: np.ndarray           # (U,) BS index per user
    c: np.ndarray              # (U,) achievable rates
    gamma: np.ndarray          # (U,) minimum rates
    phi: np.ndarray            # (U,) priorities
    fmin: np.ndarray           # (U,) gamma / c
    weight_floor_delta: float
    # derived groupings
    fmin_vb: np.ndarray = field(init=False)   # (V, B) sum of fmin per group
    phi_vb: np.ndarray = field(init=False)    # (V, B) sum of phi per group
    users_of: list[np.ndarray] = field(init=False)   # per slice, user indices

    def __post_init__(self):
        V, B = self.shares.shape
        self.fmin_vb = np.zeros((V, B))
        self.phi_vb = np.zeros((V, B))
        np.add.at(self.fmin_vb, (self.u_slice, self.u_bs), self.fmin)
        np.add.at(self.phi_vb, (self.u_slice, self.u_bs), self.phi)
        self.users_of = [np.flatnonzero(self.u_slice == v) for v in range(V)]

    @property
    def n_slices(self) -> int:
        return len(self.slice_ids)

    @property
    def n_bs(self) -> int:
        return len(self.bs_ids)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    def utility_params(self, user_index: int) -> UtilityParams:
        v = self.u_slice[user_index]
        return UtilityParams(
            phi=float(self.phi[user_index]),
            gamma=float(self.gamma[user_index]),
            alpha=float(self.alpha[v]),
        )

    def local_bids(self, weights: np.ndarray) -> np.ndarray:
        """Aggregate user weights into per-(slice, BS) local bids."""
        l = np.zeros((self.n_slices, self.n_bs))
        np.add.at(l, (self.u_slice, self.u_bs), weights)
        return l


def validate_scenario(spec: ScenarioSpec, allow_overcommit: bool = False) -> ValidatedScenario:
    """Check every scenario invariant; compile to arrays on success.

    Raises ValidationError listing every violated invariant.  With
    ``allow_overcommit`` the per-BS guaranteed-share cap is not enforced
    (needed to reproduce known pathological constructions).
    """
    issues: list[ValidationIssue] = []

    bs_ids = sorted(spec.base_stations)
    if len(set(bs_ids)) != len(bs_ids):
        issues.append(ValidationIssue("DanglingReference", "-", "duplicate BS ids"))
    slice_ids = sorted(s.id for s in spec.slices)
    if len(set(slice_ids)) != len(slice_ids):
        issues.append(ValidationIssue("DanglingReference", "-", "duplicate slice ids"))
    bs_index = {b: i for i, b in enumerate(bs_ids)}
    slice_index = {s: i for i, s in enumerate(slice_ids)}
    slices = sorted(spec.slices, key=lambda s: s.id)

    V, B = len(slice_ids), len(bs_ids)
    shares = np.zeros((V, B))
    excess = np.zeros(V)
    overall = np.zeros(V)
    alpha = np.zeros(V)

    for v, sl in enumerate(slices):
        for b, share in sl.guaranteed_shares.items():
            if b not in bs_index:
                issues.append(ValidationIssue(
                    "DanglingReference", sl.id, f"guaranteed share for unknown BS {b!r}"))
                continue
            if not (0.0 <= share <= 1.0):
                issues.append(ValidationIssue(
                    "ShareMismatch", sl.id, f"s^v_b = {share} outside [0, 1] at {b!r}"))
            shares[v, bs_index[b]] = share
        if sl.excess_share < 0:
            issues.append(ValidationIssue("ShareMismatch", sl.id, "negative excess share"))
        if sl.alpha < 0:
            issues.append(ValidationIssue("ShareMismatch", sl.id, "negative alpha"))
        excess[v] = sl.excess_share
        overall[v] = sl.overall_share
        alpha[v] = sl.alpha
        implied = sum(sl.guaranteed_shares.values()) + sl.excess_share
        scale = max(abs(sl.overall_share), abs(implied), 1.0)
        if abs(sl.overall_share - implied) > SHARE_RTOL * scale:
            issues.append(ValidationIssue(
                "ShareMismatch", sl.id,
                f"overall share {sl.overall_share} != sum of guarantees + excess {implied}"))

    if not allow_overcommit:
        for b in range(B):
            total = shares[:, b].sum()
            if total > 1.0 + SHARE_RTOL:
                issues.append(ValidationIssue(
                    "OverCommitted", bs_ids[b],
                    f"sum of guaranteed shares {total} exceeds 1"))

    user_ids = [u.id for u in spec.users]
    if len(set(user_ids)) != len(user_ids):
        issues.append(ValidationIssue("DanglingReference", "-", "duplicate user ids"))
    U = len(spec.users)
    u_slice = np.zeros(U, dtype=int)
    u_bs = np.zeros(U, dtype=int)
    c = np.zeros(U)
    gamma = np.zeros(U)
    phi = np.zeros(U)

    for i, u in enumerate(spec.users):
        if u.slice_id not in slice_index:
            issues.append(ValidationIssue(
                "DanglingReference", u.id, f"unknown slice {u.slice_id!r}"))
            continue
        if u.bs_id not in bs_index:
            issues.append(ValidationIssue(
                "DanglingReference", u.id, f"unknown BS {u.bs_id!r}"))
            continue
        u_slice[i] = slice_index[u.slice_id]
        u_bs[i] = bs_index[u.bs_id]
        if u.achievable_rate <= 0:
            issues.append(ValidationIssue("BadUser", u.id, "achievable rate must be > 0"))
            continue
        c[i] = u.achievable_rate
        if u.min_rate < 0 or u.priority < 0:
            issues.append(ValidationIssue("BadUser", u.id, "negative min rate or priority"))
            continue
        if u.min_rate == 0 and u.priority == 0:
            issues.append(ValidationIssue(
                "BadUser", u.id, "gamma = 0 and phi = 0: no traffic class"))
        gamma[i] = u.min_rate
        phi[i] = u.priority
        if u.min_fraction > 1.0:
            issues.append(ValidationIssue(
                "BadUser", u.id, f"minimum fraction {u.min_fraction} exceeds 1"))

    # per-slice priority normalization: sum phi = 1, or 0 for pure inelastic
    for sid, v in slice_index.items():
        mask = u_slice == v
        # skip slices already flagged with dangling users
        psum = phi[mask].sum()
        if mask.any() and not (
            abs(psum - 1.0) <= PRIORITY_ATOL or psum == 0.0
        ):
            issues.append(ValidationIssue(
                "PriorityMismatch", sid, f"sum of priorities is {psum}, expected 1 or 0"))

    if spec.weight_floor_delta < 0:
        issues.append(ValidationIssue("BadUser", "-", "negative weight floor delta"))

    if issues:
        raise ValidationError(issues)

    return ValidatedScenario(
        spec=spec, bs_ids=bs_ids, slice_ids=slice_ids, user_ids=user_ids,
        shares=shares, excess=excess, overall=overall, alpha=alpha,
        u_slice=u_slice, u_bs=u_bs, c=c, gamma=gamma, phi=phi,
        fmin=np.where(c > 0, gamma / np.where(c > 0, c, 1.0), 0.0),
        weight_floor_delta=spec.weight_floor_delta,
    )


def fairness_value(x: float, alpha: float):
    """Concave throughput-fairness kernel: x^(1-a)/(1-a), log at a = 1."""
    if x <= 0:
        return NEG_UTILITY
    if alpha == 1.0:
        return math.log(x)
    return x ** (1.0 - alpha) / (1.0 - alpha)


def user_utility(rate: float, params: UtilityParams):
    """Utility of one user at the given rate; NEG_UTILITY at or below gamma."""
    if rate <= params.gamma:
        return NEG_UTILITY
    if params.phi == 0.0:
        # inelastic: flat above the minimum
        return 0.0
    return params.phi * fairness_value(rate - params.gamma, params.alpha)


def overall_utility(rates: np.ndarray, scn: ValidatedScenario, users=None):
    """Share-weighted sum of user utilities (network-wide objective).

    ``users`` optionally restricts the sum to a boolean mask or index array
    (used by the metrics pipeline to compare schemes on a common user set).
    Returns NEG_UTILITY if any included user sits at or below its minimum.
    """
    include = np.ones(scn.n_users, dtype=bool)
    if users is not None:
        include = np.zeros(scn.n_users, dtype=bool)
        include[users] = True

    total = 0.0
    for i in np.flatnonzero(include):
        u = user_utility(float(rates[i]), scn.utility_params(i))
        if u is NEG_UTILITY:
            return NEG_UTILITY
        total += scn.overall[scn.u_slice[i]] * u
    return total


@dataclass(frozen=True)
class DimensioningReport:
    ok: bool
    slack: np.ndarray   # (V, B): s^v_b - sum of min fractions in the group


def check_well_dimensioned(scn: ValidatedScenario) -> DimensioningReport:
    """Do guaranteed shares cover every group's minimum resource demand?"""
    slack = scn.shares - scn.fmin_vb
    return DimensioningReport(ok=bool((slack >= -1e-15).all()), slack=slack)
