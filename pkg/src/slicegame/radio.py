"""Desk-scale wireless scenario generation.

Hexagonal sectored deployments, a log-distance channel with log-normal
shadowing and averaged Rayleigh fading, SINR-to-rate mapping through a
discrete MCS table, and two mobility models (random waypoint and a
clustered-hotspot approximation of trace-driven clustered mobility).

Randomness is counter-based: every draw comes from a fresh generator keyed
by (seed, user, epoch, purpose), so traces are reproducible and users can
be simulated in any order or in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


class UnsupportedLayout(ValueError):
    pass


# ---------------------------------------------------------------------------
# topology

SUPPORTED_SITE_COUNTS = (1, 7, 19)
SECTOR_BORESIGHTS_DEG = (0.0, 120.0, 240.0)


@dataclass(frozen=True)
class Topology:
    site_positions: np.ndarray   # (S, 2) meters
    sector_site: np.ndarray      # (B,) site index per sector
    boresight_deg: np.ndarray    # (B,)
    sector_ids: list
    isd: float

    @property
    def n_sectors(self) -> int:
        return len(self.sector_ids)

    def sector_positions(self) -> np.ndarray:
        return self.site_positions[self.sector_site]

    def region(self, pad_factor: float = 0.75):
        """Bounding box (xmin, xmax, ymin, ymax) around the deployment."""
        pad = pad_factor * self.isd
        x, y = self.site_positions[:, 0], self.site_positions[:, 1]
        return (float(x.min() - pad), float(x.max() + pad),
                float(y.min() - pad), float(y.max() + pad))


def build_topology(site_count: int = 19, isd: float = 20.0) -> Topology:
    """Hexagonal lattice of sites (center plus full rings) with 3 sectors
    each; 1, 7 and 19 sites correspond to 0, 1 and 2 rings."""
    if site_count not in SUPPORTED_SITE_COUNTS:
        raise UnsupportedLayout(f"site_count must be one of {SUPPORTED_SITE_COUNTS}")
    if isd <= 0:
        raise UnsupportedLayout("inter-site distance must be positive")
    rings = {1: 0, 7: 1, 19: 2}[site_count]

    coords = [(q, r) for q in range(-rings, rings + 1)
              for r in range(-rings, rings + 1)
              if max(abs(q), abs(r), abs(q + r)) <= rings]
    # axial hex coordinates -> cartesian, neighbor spacing = isd
    pos = np.array([(isd * (q + r / 2.0), isd * r * np.sqrt(3.0) / 2.0)
                    for q, r in coords])
    order = np.lexsort((pos[:, 0], pos[:, 1]))
    pos = pos[order]

    sector_site = np.repeat(np.arange(site_count), 3)
    boresight = np.tile(np.array(SECTOR_BORESIGHTS_DEG), site_count)
    ids = [f"bs{s:02d}_{k}" for s in range(site_count) for k in range(3)]
    return Topology(site_positions=pos, sector_site=sector_site,
                    boresight_deg=boresight, sector_ids=ids, isd=isd)


# ---------------------------------------------------------------------------
# channel

@dataclass(frozen=True)
class ChannelParams:
    fc_ghz: float = 2.5
    tx_power_db: float = 41.0
    noise_db: float = -104.0
    antenna_gain_dbi: float = 17.0
    shadow_std_db: float = 8.0
    beamwidth_deg: float = 70.0
    front_back_db: float = 20.0
    fading_samples: int = 100    # Rayleigh draws averaged per 1 s epoch
    min_distance_m: float = 0.5


def pathloss_db(distance_m, fc_ghz: float):
    """Log-distance pathloss: 36.7 log10(d) + 22.7 + 26 log10(fc)."""
    d = np.maximum(np.asarray(distance_m, dtype=float), 1e-9)
    return 36.7 * np.log10(d) + 22.7 + 26.0 * np.log10(fc_ghz)


def antenna_pattern_db(offset_deg, params: ChannelParams):
    """Parabolic sector pattern: 12 (theta/theta_3dB)^2 attenuation, capped
    at the front-to-back ratio.  Returns attenuation <= 0 in dB."""
    theta = (np.asarray(offset_deg, dtype=float) + 180.0) % 360.0 - 180.0
    att = 12.0 * (theta / params.beamwidth_deg) ** 2
    return -np.minimum(att, params.front_back_db)


def channel_rng(seed: int, user: int, epoch: int, purpose: int = 0):
    return np.random.default_rng([int(seed), int(user), int(epoch), purpose])


def channel_gains_db(topo: Topology, params: ChannelParams,
                     position: np.ndarray, seed: int, user: int,
                     epoch: int) -> np.ndarray:
    """(B,) channel gain toward one user for the given 1 s epoch.

    gain = antenna peak + pattern - pathloss - shadowing + fading, with the
    fading term the dB value of the epoch-averaged Rayleigh power.
    """
    sec_pos = topo.sector_positions()
    diff = np.asarray(position, dtype=float) - sec_pos
    d = np.maximum(np.hypot(diff[:, 0], diff[:, 1]), params.min_distance_m)
    bearing = np.degrees(np.arctan2(diff[:, 1], diff[:, 0]))
    pattern = antenna_pattern_db(bearing - topo.boresight_deg, params)

    rng = channel_rng(seed, user, epoch, purpose=1)
    shadow = rng.normal(0.0, params.shadow_std_db, size=topo.n_sectors)
    fading_avg = rng.standard_exponential(
        (topo.n_sectors, params.fading_samples)).mean(axis=1)
    fading_db = 10.0 * np.log10(fading_avg)

    return (params.antenna_gain_dbi + pattern - pathloss_db(d, params.fc_ghz)
            - shadow + fading_db)


def sinr_db(topo: Topology, params: ChannelParams, gains_db: np.ndarray) -> np.ndarray:
    """Per-candidate-sector SINR given the per-sector gains of one user."""
    rx = 10.0 ** ((params.tx_power_db + gains_db) / 10.0)
    noise = 10.0 ** (params.noise_db / 10.0)
    total = rx.sum() + noise
    return 10.0 * np.log10(rx / (total - rx))


# ---------------------------------------------------------------------------
# MCS

@dataclass(frozen=True)
class McsTable:
    thresholds_db: np.ndarray    # strictly increasing
    efficiencies: np.ndarray     # bits/s/Hz, nondecreasing
    bandwidth_hz: float = 10e6

    def __post_init__(self):
        t = np.asarray(self.thresholds_db, dtype=float)
        e = np.asarray(self.efficiencies, dtype=float)
        if t.shape != e.shape or t.ndim != 1:
            raise ValueError("thresholds and efficiencies must be 1-d and aligned")
        if not (np.diff(t) > 0).all():
            raise ValueError("MCS thresholds must be strictly increasing")
        if not (np.diff(e) >= 0).all():
            raise ValueError("MCS efficiencies must be nondecreasing")
        object.__setattr__(self, "thresholds_db", t)
        object.__setattr__(self, "efficiencies", e)

    def rate_for_sinr_db(self, sinr):
        """Achievable rate in bits/s; zero below the lowest threshold."""
        idx = np.searchsorted(self.thresholds_db, np.asarray(sinr, dtype=float),
                              side="right")
        eff = np.concatenate(([0.0], self.efficiencies))[idx]
        return eff * self.bandwidth_hz


def default_mcs(bandwidth_hz: float = 10e6) -> McsTable:
    """15-entry CQI-style table spanning -6.7 .. 22.7 dB."""
    thresholds = np.array([-6.7, -4.7, -2.3, 0.2, 2.4, 4.3, 5.9, 8.1,
                           10.3, 11.7, 14.1, 16.3, 18.7, 21.0, 22.7])
    efficiencies = np.array([0.15, 0.23, 0.38, 0.60, 0.88, 1.18, 1.48, 1.91,
                             2.41, 2.73, 3.32, 3.90, 4.52, 5.12, 5.55])
    return McsTable(thresholds_db=thresholds, efficiencies=efficiencies,
                    bandwidth_hz=bandwidth_hz)


def associate_and_rate(topo: Topology, params: ChannelParams, mcs: McsTable,
                       position: np.ndarray, seed: int, user: int, epoch: int):
    """Strongest-SINR association for one user-epoch.

    Returns (sector index, achievable rate bits/s).  Ties resolve to the
    lowest sector index (ids are ordered).
    """
    gains = channel_gains_db(topo, params, position, seed, user, epoch)
    s = sinr_db(topo, params, gains)
    b = int(np.argmax(s))
    return b, float(mcs.rate_for_sinr_db(s[b]))


# ---------------------------------------------------------------------------
# mobility

@dataclass(frozen=True)
class MobilityState:
    model: str                 # "rwp" | "hotspot"
    position: np.ndarray       # (2,)
    waypoint: np.ndarray       # (2,)
    speed: float               # m/s
    pause_left: float          # s
    clusters: np.ndarray | None = None   # (K, 2) hotspot centers
    cluster_radius: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "waypoint", np.asarray(self.waypoint, dtype=float))


RWP_SPEED_RANGE = (0.5, 1.5)       # m/s, uniform
RWP_PAUSE_RANGE = (0.0, 2.0)       # s at each waypoint
HOTSPOT_PAUSE_RANGE = (20.0, 60.0)  # long dwells keep users clustered


def _uniform_point(region, rng):
    xmin, xmax, ymin, ymax = region
    return np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])


def _clip_to_region(p, region):
    xmin, xmax, ymin, ymax = region
    return np.array([np.clip(p[0], xmin, xmax), np.clip(p[1], ymin, ymax)])


def make_hotspots(region, n_clusters: int, rng, radius: float | None = None,
                  avoid=None, min_sep: float | None = None):
    """Fixed hotspot centers, kept away from the region border.

    ``avoid`` lists centers of other populations whose demand should stay
    spatially distinct; candidates closer than ``min_sep`` to any of them
    are rejection-sampled (best effort, falling back to the farthest
    candidate so the call always succeeds).  With no conflicts the draw
    consumes exactly two uniforms per center.
    """
    xmin, xmax, ymin, ymax = region
    span = min(xmax - xmin, ymax - ymin)
    radius = 0.08 * span if radius is None else radius
    if min_sep is None:
        min_sep = 2.5 * radius
    avoid = [np.asarray(a, dtype=float) for a in (avoid or [])]
    centers = []
    for _ in range(n_clusters):
        best, best_d = None, -np.inf
        for _ in range(200):
            p = np.array([rng.uniform(xmin + radius, xmax - radius),
                          rng.uniform(ymin + radius, ymax - radius)])
            d = min((float(np.hypot(*(p - a))) for a in avoid), default=np.inf)
            if d >= min_sep:
                best = p
                break
            if d > best_d:
                best, best_d = p, d
        centers.append(best)
    return np.stack(centers), radius


def _hotspot_waypoint(state: MobilityState, rng):
    """Next hotspot chosen with weight decaying in distance (nearer clusters
    strongly preferred), then a point inside that cluster."""
    d = np.hypot(*(state.clusters - state.position).T)
    w = 1.0 / (d + state.cluster_radius) ** 2
    k = rng.choice(len(state.clusters), p=w / w.sum())
    angle = rng.uniform(0.0, 2 * np.pi)
    r = state.cluster_radius * np.sqrt(rng.uniform(0.0, 1.0))
    return state.clusters[k] + r * np.array([np.cos(angle), np.sin(angle)])


def init_mobility(model: str, region, rng, clusters=None,
                  cluster_radius: float = 0.0) -> MobilityState:
    if model == "rwp":
        pos = _uniform_point(region, rng)
        wp = _uniform_point(region, rng)
    elif model == "hotspot":
        if clusters is None:
            raise ValueError("hotspot mobility needs cluster centers")
        k = rng.integers(0, len(clusters))
        angle = rng.uniform(0.0, 2 * np.pi)
        r = cluster_radius * np.sqrt(rng.uniform(0.0, 1.0))
        pos = clusters[k] + r * np.array([np.cos(angle), np.sin(angle)])
        state = MobilityState(model, pos, pos, 0.0, 0.0,
                              clusters=np.asarray(clusters, dtype=float),
                              cluster_radius=cluster_radius)
        wp = _hotspot_waypoint(state, rng)
    else:
        raise ValueError(f"unknown mobility model {model!r}")
    speed = rng.uniform(*RWP_SPEED_RANGE)
    if model == "rwp":
        return MobilityState(model, pos, wp, speed, 0.0)
    return MobilityState(model, pos, wp, speed, 0.0,
                         clusters=np.asarray(clusters, dtype=float),
                         cluster_radius=cluster_radius)


def step_mobility(state: MobilityState, dt: float, region, rng) -> MobilityState:
    """Advance one user by dt seconds; waypoints and pauses consume the
    remaining time budget recursively."""
    if dt <= 0:
        return state
    if state.pause_left > 0:
        if state.pause_left >= dt:
            return replace(state, pause_left=state.pause_left - dt)
        dt -= state.pause_left
        state = replace(state, pause_left=0.0)

    to_wp = state.waypoint - state.position
    dist = float(np.hypot(*to_wp))
    travel = state.speed * dt
    if travel < dist:
        new_pos = state.position + to_wp * (travel / dist)
        return replace(state, position=_clip_to_region(new_pos, region))

    # waypoint reached: pause, then pick the next leg
    leftover = dt - (dist / state.speed if state.speed > 0 else 0.0)
    if state.model == "rwp":
        wp = _uniform_point(region, rng)
        pause = rng.uniform(*RWP_PAUSE_RANGE)
    else:
        wp = _hotspot_waypoint(replace(state, position=state.waypoint), rng)
        pause = rng.uniform(*HOTSPOT_PAUSE_RANGE)
    nxt = replace(state, position=state.waypoint.copy(), waypoint=wp,
                  speed=rng.uniform(*RWP_SPEED_RANGE), pause_left=pause)
    return step_mobility(nxt, leftover, region, rng)
