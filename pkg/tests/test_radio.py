import numpy as np
import pytest
from scipy import stats

from slicegame.radio import (
    ChannelParams, McsTable, MobilityState, Topology, UnsupportedLayout,
    antenna_pattern_db, associate_and_rate, build_topology, channel_gains_db,
    default_mcs, init_mobility, make_hotspots, pathloss_db, sinr_db,
    step_mobility,
)


# ---------------------------------------------------------------------------
# topology


def test_single_site():
    topo = build_topology(1, 20.0)
    assert topo.n_sectors == 3
    assert topo.site_positions.shape == (1, 2)
    assert np.hypot(*topo.site_positions[0]) == pytest.approx(0.0)


def test_seven_sites_first_ring_geometry():
    topo = build_topology(7, 20.0)
    assert topo.n_sectors == 21
    d0 = np.hypot(*topo.site_positions.T)
    center = int(np.argmin(d0))
    dists = np.hypot(*(topo.site_positions - topo.site_positions[center]).T)
    ring = np.sort(dists)[1:]
    assert ring == pytest.approx(np.full(6, 20.0), rel=1e-9)


def test_nineteen_sites():
    topo = build_topology(19, 20.0)
    assert topo.n_sectors == 57
    assert len(topo.sector_ids) == len(set(topo.sector_ids))
    assert topo.sector_ids == sorted(topo.sector_ids)


def test_unsupported_layouts():
    with pytest.raises(UnsupportedLayout):
        build_topology(5, 20.0)
    with pytest.raises(UnsupportedLayout):
        build_topology(7, -1.0)


# ---------------------------------------------------------------------------
# channel


def test_pathloss_reference_values():
    assert pathloss_db(20.0, 2.5) == pytest.approx(80.80, abs=0.01)
    # at 1 m the distance term vanishes
    assert pathloss_db(1.0, 2.5) == pytest.approx(22.7 + 26 * np.log10(2.5), abs=1e-12)


def test_antenna_pattern():
    p = ChannelParams()
    assert antenna_pattern_db(0.0, p) == pytest.approx(0.0)
    # 3 dB down at half the beamwidth
    assert antenna_pattern_db(35.0, p) == pytest.approx(-3.0)
    assert antenna_pattern_db(180.0, p) == pytest.approx(-p.front_back_db)
    # wrap-around symmetry
    assert antenna_pattern_db(350.0, p) == pytest.approx(antenna_pattern_db(-10.0, p))


def test_channel_gain_deterministic_per_key():
    topo = build_topology(1, 20.0)
    p = ChannelParams()
    pos = np.array([5.0, 3.0])
    g1 = channel_gains_db(topo, p, pos, seed=7, user=3, epoch=11)
    g2 = channel_gains_db(topo, p, pos, seed=7, user=3, epoch=11)
    assert g1 == pytest.approx(g2, abs=0.0)
    assert not np.allclose(g1, channel_gains_db(topo, p, pos, 7, 3, 12))
    assert not np.allclose(g1, channel_gains_db(topo, p, pos, 7, 4, 11))


def test_shadowing_std_monte_carlo():
    topo = build_topology(1, 20.0)
    p = ChannelParams()
    pos = np.array([10.0, 0.0])
    samples = np.array([channel_gains_db(topo, p, pos, seed=1, user=0, epoch=e)[0]
                        for e in range(10_000)])
    # averaged Rayleigh adds ~0.4 dB on top of the 8 dB shadowing
    assert samples.std() == pytest.approx(8.0, abs=0.2)


def test_sinr_no_interference_single_sector():
    p = ChannelParams()
    topo = Topology(site_positions=np.zeros((1, 2)),
                    sector_site=np.array([0]), boresight_deg=np.array([0.0]),
                    sector_ids=["bs00_0"], isd=20.0)
    g = np.array([-60.0])
    s = sinr_db(topo, p, g)
    assert s[0] == pytest.approx(p.tx_power_db - 60.0 - p.noise_db)


def test_sinr_two_equal_sectors_near_zero_db():
    p = ChannelParams()
    topo = Topology(site_positions=np.zeros((2, 2)),
                    sector_site=np.array([0, 1]),
                    boresight_deg=np.array([0.0, 0.0]),
                    sector_ids=["a", "b"], isd=20.0)
    s = sinr_db(topo, p, np.array([-60.0, -60.0]))
    # interference-limited: equal powers give almost exactly 0 dB
    assert s == pytest.approx([0.0, 0.0], abs=0.01)


def test_association_matches_bruteforce_scan():
    topo = build_topology(7, 20.0)
    p = ChannelParams()
    mcs = default_mcs()
    rng = np.random.default_rng(0)
    for trial in range(20):
        pos = rng.uniform(-30, 30, size=2)
        b, rate = associate_and_rate(topo, p, mcs, pos, seed=5, user=trial, epoch=2)
        gains = channel_gains_db(topo, p, pos, seed=5, user=trial, epoch=2)
        rx = 10.0 ** ((p.tx_power_db + gains) / 10.0)
        noise = 10.0 ** (p.noise_db / 10.0)
        best, best_sinr = 0, -np.inf
        for k in range(topo.n_sectors):
            s = rx[k] / (rx.sum() - rx[k] + noise)
            if s > best_sinr:
                best, best_sinr = k, s
        assert b == best
        assert rate == mcs.rate_for_sinr_db(10 * np.log10(best_sinr))


# ---------------------------------------------------------------------------
# MCS


def test_mcs_table_validation():
    with pytest.raises(ValueError):
        McsTable(np.array([0.0, 0.0]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        McsTable(np.array([0.0, 1.0]), np.array([2.0, 1.0]))


def test_mcs_rate_mapping():
    mcs = default_mcs()
    assert mcs.rate_for_sinr_db(-20.0) == 0.0
    assert mcs.rate_for_sinr_db(-6.7) == pytest.approx(0.15 * 10e6)
    assert mcs.rate_for_sinr_db(30.0) == pytest.approx(5.55 * 10e6)
    grid = np.linspace(-30, 40, 500)
    rates = mcs.rate_for_sinr_db(grid)
    assert (np.diff(rates) >= 0).all()


# ---------------------------------------------------------------------------
# mobility


def test_zero_dt_is_identity():
    rng = np.random.default_rng(0)
    region = (0.0, 100.0, 0.0, 100.0)
    st0 = init_mobility("rwp", region, rng)
    assert step_mobility(st0, 0.0, region, rng) is st0


def test_rwp_moves_toward_waypoint():
    region = (0.0, 100.0, 0.0, 100.0)
    st0 = MobilityState("rwp", np.array([0.0, 0.0]), np.array([10.0, 0.0]),
                        speed=1.0, pause_left=0.0)
    st1 = step_mobility(st0, 2.0, region, np.random.default_rng(0))
    assert st1.position == pytest.approx([2.0, 0.0])
    assert st1.waypoint == pytest.approx(st0.waypoint)


def test_rwp_occupancy_matches_stationary_oracle():
    """Time-sampled positions vs an independently constructed stationary
    sample (uniform waypoints for pauses, length-weighted segments for
    motion), compared with a two-sample chi-squared test on a 10x10 grid."""
    region = (0.0, 100.0, 0.0, 100.0)
    rng = np.random.default_rng(42)
    positions = []
    # chi-squared needs independent draws: thin each trajectory well past the
    # region-crossing time so consecutive samples decorrelate
    for u in range(200):
        st = init_mobility("rwp", region, rng)
        for _ in range(300):   # burn-in toward stationarity
            st = step_mobility(st, 1.0, region, rng)
        for _ in range(10):
            st = step_mobility(st, 150.0, region, rng)
            positions.append(st.position)
    positions = np.array(positions)

    orng = np.random.default_rng(7)
    n = len(positions)
    # motion phase: endpoints uniform, pairs weighted by travel time
    a = orng.uniform(0, 100, size=(4 * n, 2))
    b = orng.uniform(0, 100, size=(4 * n, 2))
    lengths = np.hypot(*(b - a).T)
    speeds = orng.uniform(0.5, 1.5, size=4 * n)
    w = lengths / speeds
    pick = orng.choice(4 * n, size=n, p=w / w.sum())
    t = orng.uniform(0, 1, size=n)
    moving = a[pick] + t[:, None] * (b[pick] - a[pick])
    # pause phase: uniform waypoints, mixed by expected time fractions
    mean_pause = 1.0
    mean_travel = w.mean()
    p_pause = mean_pause / (mean_pause + mean_travel)
    is_pause = orng.random(n) < p_pause
    oracle = np.where(is_pause[:, None], orng.uniform(0, 100, size=(n, 2)), moving)

    bins = np.linspace(0, 100, 11)
    h_model, _, _ = np.histogram2d(positions[:, 0], positions[:, 1], bins=(bins, bins))
    h_oracle, _, _ = np.histogram2d(oracle[:, 0], oracle[:, 1], bins=(bins, bins))
    table = np.stack([h_model.ravel(), h_oracle.ravel()])
    _, p_value, _, _ = stats.chi2_contingency(table)
    assert p_value > 0.01


def test_hotspot_dwell_concentration():
    region = (0.0, 100.0, 0.0, 100.0)
    rng = np.random.default_rng(3)
    centers, radius = make_hotspots(region, 3, rng)
    inside = total = 0
    for u in range(20):
        st = init_mobility("hotspot", region, rng, clusters=centers,
                           cluster_radius=radius)
        for _ in range(2000):
            st = step_mobility(st, 1.0, region, rng)
            d = np.hypot(*(centers - st.position).T).min()
            inside += d <= radius + 1e-9
            total += 1
    assert inside / total >= 0.8


def test_positions_stay_in_region():
    region = (-10.0, 10.0, -10.0, 10.0)
    rng = np.random.default_rng(9)
    st = init_mobility("rwp", region, rng)
    for _ in range(300):
        st = step_mobility(st, 1.0, region, rng)
        assert -10 <= st.position[0] <= 10 and -10 <= st.position[1] <= 10
