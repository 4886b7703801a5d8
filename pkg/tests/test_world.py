import math
import random
import statistics

import pytest
from hypothesis import given
from hypothesis import strategies as st

from skylink.model import CellLocation, IncomparableKinds, Position
from skylink.world import (
    BaseStation,
    C2Mode,
    C2ModeState,
    NodeMotion,
    NoCoverage,
    WorldState,
    gnss_self_report,
    link_quality,
    mean_position,
    ngbs_measure,
    select_c2_mode,
    verify_location,
    world_advance,
)

ORIGIN_BS = BaseStation("gnb-1", Position(0, 0, 0), 1000.0)


def one_node(motion):
    return WorldState({"n": motion}, [ORIGIN_BS])


class TestAdvance:
    def test_kinematics(self):
        s = one_node(NodeMotion(Position(0, 0, 0), [Position(10, 0, 0)], 5.0))
        world_advance(s, 1000)
        assert s.nodes["n"].position == Position(5, 0, 0)

    def test_rest_without_waypoints(self):
        s = one_node(NodeMotion(Position(1, 2, 3), [], 5.0))
        world_advance(s, 1000)
        assert s.nodes["n"].position == Position(1, 2, 3)

    def test_arrival_within_one_metre_consumes_waypoint(self):
        s = one_node(NodeMotion(Position(0, 0, 0), [Position(0.5, 0, 0), Position(10, 0, 0)], 1.0))
        world_advance(s, 100)
        assert s.nodes["n"].waypoints == [Position(10, 0, 0)]

    @given(st.floats(0.1, 50), st.integers(1, 2000))
    def test_never_moves_further_than_speed_times_dt(self, speed, dt):
        s = one_node(NodeMotion(Position(0, 0, 0), [Position(1000, 500, 20)], speed))
        world_advance(s, dt)
        assert s.nodes["n"].position.norm() <= speed * dt / 1000 + 1e-9


class TestSelfReport:
    def test_unspoofed(self):
        s = one_node(NodeMotion(Position(100, 200, 50)))
        assert gnss_self_report(s, "n") == Position(100, 200, 50)

    def test_spoof_offset(self):
        s = one_node(NodeMotion(Position(100, 200, 50), spoof_offset=Position(200, 0, 0)))
        assert gnss_self_report(s, "n") == Position(300, 200, 50)


class TestMeasure:
    def test_zero_noise_is_truth(self):
        assert ngbs_measure(ORIGIN_BS, Position(100, 200, 50), 0.0, random.Random(1)) == Position(100, 200, 50)

    def test_out_of_coverage(self):
        assert ngbs_measure(ORIGIN_BS, Position(2000, 0, 0), 5.0, random.Random(1)) is None

    def test_noise_calibration(self):
        rng = random.Random(2024)
        truth = Position(10, 20, 30)
        samples = [ngbs_measure(ORIGIN_BS, truth, 5.0, rng) for _ in range(10_000)]
        for axis, t in zip("xyz", truth.as_tuple()):
            vals = [getattr(p, axis) for p in samples]
            assert abs(statistics.pstdev(vals) - 5.0) <= 0.2
            # unbiased: per-axis bias below sigma/10
            assert abs(statistics.fmean(vals) - t) < 0.5

    def test_mean_of_three_zero_noise_stations(self):
        truth = Position(100, 200, 50)
        stations = [BaseStation(f"b{i}", Position(i * 100, 0, 0), 5000) for i in range(3)]
        est = mean_position([ngbs_measure(b, truth, 0.0, random.Random(0)) for b in stations])
        assert est == truth

    def test_no_measurements(self):
        with pytest.raises(NoCoverage):
            mean_position([])

    def test_rms_of_mean_estimate_matches_sigma_over_root_n(self):
        # oracle: the mean of N independent N(0, sigma^2) draws has std sigma/sqrt(N)
        rng = random.Random(99)
        sigma, n = 5.0, 4
        truth = Position(0, 0, 0)
        errs = []
        for _ in range(4000):
            est = mean_position([ngbs_measure(ORIGIN_BS, truth, sigma, rng) for _ in range(n)])
            errs += list(est.as_tuple())
        rms = math.sqrt(math.fsum(e * e for e in errs) / len(errs))
        assert rms == pytest.approx(sigma / math.sqrt(n), rel=0.05)


class TestVerifyLocation:
    def test_equal_is_consistent(self):
        p = Position(1, 2, 3)
        assert verify_location(p, p, 50).consistent

    def test_far_is_mismatch_with_distance(self):
        v = verify_location(Position(200, 0, 0), Position(0, 0, 0), 50)
        assert not v.consistent and v.distance == pytest.approx(200)

    def test_cells_compare_by_id(self):
        assert verify_location(CellLocation("gnb-1"), CellLocation("gnb-1"), 0).consistent
        assert not verify_location(CellLocation("gnb-1"), CellLocation("gnb-2"), 0).consistent

    def test_mixed_kinds(self):
        with pytest.raises(IncomparableKinds):
            verify_location(CellLocation("gnb-1"), Position(0, 0, 0), 50)

    @given(st.tuples(*[st.integers(-4000, 4000)] * 3), st.integers(0, 3200))
    def test_sigma_zero_mismatch_iff_offset_exceeds_threshold(self, offset8, threshold8):
        # eighth-metre grid keeps every sum exact in binary floating point
        offset = tuple(v / 8 for v in offset8)
        threshold = threshold8 / 8
        truth = Position(100, 200, 50)
        estimate = ngbs_measure(ORIGIN_BS, truth, 0.0, random.Random(0))
        v = verify_location(truth + Position.of(offset), estimate, threshold)
        squared = sum(c * c for c in offset8)
        assert (not v.consistent) == (squared > threshold8 * threshold8)


class TestC2Mode:
    def test_high_quality_direct(self):
        assert select_c2_mode(C2ModeState(), 0.9).mode is C2Mode.DIRECT

    def test_decay_switches_below_band(self):
        state = C2ModeState(t_direct=0.6, hysteresis=0.05)
        switched_at = None
        for q in [0.9 - 0.01 * i for i in range(41)]:
            state = select_c2_mode(state, q)
            if state.mode is not C2Mode.DIRECT:
                switched_at = q
                break
        assert switched_at is not None and switched_at < 0.55 and switched_at > 0.54 - 1e-9
        assert state.mode is C2Mode.NETWORK_ASSISTED

    def test_full_jam_goes_utm_navigated(self):
        q = link_quality(Position(0, 0, 100), Position(0, 0, 0), 1000, jam_intensity=1.0)
        assert q == 0
        assert select_c2_mode(C2ModeState(), q).mode is C2Mode.UTM_NAVIGATED

    def test_thresholds_validated(self):
        with pytest.raises(ValueError):
            C2ModeState(t_direct=0.3, t_assisted=0.6)

    @given(
        st.sampled_from(list(C2Mode)),
        st.floats(0, 1, allow_nan=False),
        st.floats(0, 1, allow_nan=False),
    )
    def test_mode_nonincreasing_as_quality_drops(self, start, q1, q2):
        hi, lo = max(q1, q2), min(q1, q2)
        s = C2ModeState(mode=start)
        assert select_c2_mode(s, lo).mode.capability <= select_c2_mode(s, hi).mode.capability

    @given(st.sampled_from(list(C2Mode)), st.floats(0, 1, allow_nan=False))
    def test_mode_changes_only_beyond_hysteresis(self, start, q):
        s = C2ModeState(mode=start)
        new = select_c2_mode(s, q).mode
        floor = {C2Mode.NETWORK_ASSISTED: s.t_assisted, C2Mode.DIRECT: s.t_direct}
        if new.capability > start.capability:
            assert q > floor[new] + s.hysteresis
        elif new.capability < start.capability:
            assert q <= floor[start] - s.hysteresis
