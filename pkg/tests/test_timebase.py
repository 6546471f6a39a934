import math
from fractions import Fraction

import numpy as np
import pytest

from wsnsim.timebase import (
    ClockParams,
    ConfigurationError,
    EffectiveClock,
    LOGICAL_QUANTUM,
    LogicalClockState,
    NonMonotonicBeacon,
    PS_PER_SECOND,
    RateUnavailable,
    REFERENCE_CLOCK,
    ScfrState,
    compose_clock,
    hw_invert,
    hw_read,
    logical_read,
    logical_rebase,
    logical_start,
    ps_from_seconds,
    round_half_away,
    sample_clock_params,
    scfr_ratio,
    scfr_update,
    snap,
)

S = PS_PER_SECOND


def sec(x: float) -> int:
    return ps_from_seconds(x)


class TestRounding:
    def test_round_half_away_ties(self):
        assert round_half_away(Fraction(1, 2)) == 1
        assert round_half_away(Fraction(-1, 2)) == -1
        assert round_half_away(Fraction(5, 2)) == 3
        assert round_half_away(Fraction(-5, 2)) == -3
        assert round_half_away(Fraction(3, 4)) == 1
        assert round_half_away(Fraction(-3, 4)) == -1
        assert round_half_away(7) == 7

    def test_ps_from_seconds(self):
        assert sec(1.0) == S
        assert sec(-1.0) == -S
        assert sec(100 / 3e8) == 333_333
        assert sec(0.0) == 0

    def test_snap_is_idempotent(self):
        value = Fraction(12345678901, 7)
        once = snap(value)
        assert snap(once) == once
        assert once.denominator <= LOGICAL_QUANTUM


class TestSampling:
    def test_default_bounds_respected(self):
        rng = np.random.default_rng(42)
        for _ in range(10_000):
            params = sample_clock_params(rng, 100.0, 1.0)
            assert abs(params.ratio - 1.0) <= 100e-6
            assert abs(params.offset_s) <= 1.0

    def test_million_samples_never_escape_bounds(self):
        rng = np.random.default_rng(3)
        for _ in range(1_000_000):
            params = sample_clock_params(rng, 100.0, 1.0)
            if abs(params.ratio - 1.0) > 100e-6 or abs(params.offset_s) > 1.0:
                pytest.fail(f"sample escaped bounds: {params}")

    def test_empirical_std_of_truncated_ratio(self):
        rng = np.random.default_rng(11)
        ratios = np.array(
            [sample_clock_params(rng, 100.0, 1.0).ratio for _ in range(100_000)]
        )
        std_ppm = ratios.std() * 1e6
        assert 25.0 <= std_ppm <= 40.0

    def test_degenerate_bound_pins_ratio(self):
        rng = np.random.default_rng(0)
        params = sample_clock_params(rng, 1e-9 * 1e6, 1e-9)
        assert abs(params.ratio - 1.0) <= 1e-9

    def test_non_positive_bounds_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigurationError):
            sample_clock_params(rng, 0.0, 1.0)
        with pytest.raises(ConfigurationError):
            sample_clock_params(rng, 100.0, -1.0)


class TestEffectiveClock:
    def test_reference_clock_is_exact_identity(self):
        assert REFERENCE_CLOCK.ratio_eff == 1
        assert REFERENCE_CLOCK.offset_eff_ps == 0
        assert REFERENCE_CLOCK.is_identity

    def test_compose_identity_parent(self):
        child = compose_clock(REFERENCE_CLOCK, ClockParams(1.0001, 0.5))
        assert abs(float(child.ratio_eff) - 1.0001) < 1e-12
        assert abs(float(child.offset_eff_ps) / S - 0.5) < 1e-12

    def test_compose_identity_rel(self):
        child = compose_clock(REFERENCE_CLOCK, ClockParams(1.0, 0.0))
        assert child == REFERENCE_CLOCK

    def test_compose_chained(self):
        parent = compose_clock(REFERENCE_CLOCK, ClockParams(1.0001, 0.5))
        child = compose_clock(parent, ClockParams(0.9999, -0.2))
        assert abs(float(child.ratio_eff) - 0.99999999) < 1e-12
        assert abs(float(child.offset_eff_ps) / S - 0.29995) < 1e-12

    def test_compose_associativity_within_1ps(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            a = sample_clock_params(rng, 100.0, 1.0)
            b = sample_clock_params(rng, 100.0, 1.0)
            via_chain = compose_clock(compose_clock(REFERENCE_CLOCK, a), b)
            product = ClockParams(b.ratio * a.ratio, b.ratio * a.offset_s + b.offset_s)
            via_product = compose_clock(REFERENCE_CLOCK, product)
            for t in (0, sec(1.0), sec(3600.0), -sec(1.0)):
                lhs = hw_read(via_chain, t)
                rhs = hw_read(via_product, t)
                assert abs(lhs - rhs) < 1  # < 1 ps

    def test_hw_read_examples(self):
        assert hw_read(REFERENCE_CLOCK, 123456) == 123456
        clock = compose_clock(REFERENCE_CLOCK, ClockParams(1.0001, 0.5))
        assert abs(hw_read(clock, sec(1000.0)) - sec(1000.6)) < 1
        pure_offset = compose_clock(REFERENCE_CLOCK, ClockParams(1.0, -1.0))
        assert hw_read(pure_offset, 0) == -S

    def test_hw_read_linearity(self):
        clock = compose_clock(REFERENCE_CLOCK, ClockParams(1.000073, -0.41))
        rng = np.random.default_rng(2)
        for _ in range(500):
            a = int(rng.integers(0, 3600 * S))
            b = int(rng.integers(0, 3600 * S))
            lhs = hw_read(clock, a) - hw_read(clock, b)
            rhs = clock.ratio_eff * (a - b)
            assert abs(lhs - rhs) < 2

    def test_hw_invert_examples(self):
        assert hw_invert(REFERENCE_CLOCK, sec(5.0)) == sec(5.0)
        clock = compose_clock(REFERENCE_CLOCK, ClockParams(1.0001, 0.5))
        t = hw_invert(clock, hw_read(clock, sec(1000.0)))
        assert abs(t - sec(1000.0)) < 1

    def test_hw_round_trip_property(self):
        rng = np.random.default_rng(9)
        clocks = [
            compose_clock(REFERENCE_CLOCK, sample_clock_params(rng, 100.0, 1.0))
            for _ in range(5)
        ]
        for _ in range(10_000):
            clock = clocks[int(rng.integers(0, len(clocks)))]
            t = int(rng.integers(-(10**6) * S // 1000, 3600 * S))
            back = hw_invert(clock, hw_read(clock, t))
            assert abs(back - t) < 1

    def test_horizon_range(self):
        # +/- 1e6 seconds must stay exact integer arithmetic.
        t = 10**6 * S
        assert hw_read(REFERENCE_CLOCK, t) == t
        assert hw_read(REFERENCE_CLOCK, -t) == -t

    def test_bad_ratio_rejected(self):
        with pytest.raises(ConfigurationError):
            ClockParams(0.0, 0.0)
        with pytest.raises(ConfigurationError):
            ClockParams(-1.0, 0.0)


class TestScfr:
    def test_accumulation(self):
        state = ScfrState()
        state = scfr_update(state, 0, 0)
        assert state.pair_count == 1 and not state.ready
        with pytest.raises(RateUnavailable):
            scfr_ratio(state)
        state = scfr_update(state, 10 * S, 10 * S)
        assert state.pair_count == 2 and state.ready
        assert scfr_ratio(state) == 1

    def test_ratio_example(self):
        state = scfr_update(ScfrState(), 0, 0)
        state = scfr_update(state, 100 * S, sec(100.01))
        assert scfr_ratio(state) == Fraction(10001, 10000)

    def test_out_of_order_rejected(self):
        state = scfr_update(ScfrState(), 10 * S, 10 * S)
        with pytest.raises(NonMonotonicBeacon):
            scfr_update(state, 5 * S, 5 * S)
        with pytest.raises(NonMonotonicBeacon):
            scfr_update(state, 10 * S, 11 * S)  # equal stamp is stale too
        assert state.last_pair == (10 * S, 10 * S)  # untouched

    def test_intermediate_pairs_do_not_matter(self):
        # Only the first and the latest pair define the estimate.
        a = scfr_update(scfr_update(ScfrState(), 0, 0), 50 * S, sec(50.005))
        b = scfr_update(a, 100 * S, sec(100.01))
        assert scfr_ratio(b) == Fraction(10001, 10000)

    def test_exact_under_zero_jitter(self):
        # arrivals = R * departure + c reproduces R exactly.
        r_true = Fraction(1000037, 1000000)
        c = Fraction(7, 3)
        state = ScfrState()
        for k in (0, 3, 11, 17):
            dep = k * S
            state = scfr_update(state, dep, r_true * dep + c)
        assert scfr_ratio(state) == r_true
        assert abs(scfr_ratio(state) - r_true) < Fraction(1, 10**12)


class TestLogicalClock:
    def test_read_at_anchor(self):
        state = LogicalClockState(100 * S, Fraction(50 * S), Fraction(2))
        assert logical_read(state, 100 * S) == 50 * S

    def test_read_example(self):
        state = LogicalClockState(100 * S, Fraction(50 * S), Fraction(2))
        assert logical_read(state, 110 * S) == 55 * S

    def test_unit_rate(self):
        state = LogicalClockState(100 * S, Fraction(50 * S), Fraction(1))
        for dt in (0, 17, 12345, 3600 * S):
            assert logical_read(state, 100 * S + dt) == 50 * S + dt

    def test_rebase_noop(self):
        state = LogicalClockState(100 * S, Fraction(50 * S), Fraction(2))
        assert logical_rebase(state, 100 * S, Fraction(2)) == state

    def test_rebase_example(self):
        state = LogicalClockState(100 * S, Fraction(50 * S), Fraction(2))
        rebased = logical_rebase(state, 110 * S, Fraction(1))
        assert rebased.anchor_logical == 55 * S
        assert logical_read(rebased, 110 * S) == 55 * S

    def test_continuity_exact_at_anchors(self):
        rng = np.random.default_rng(13)
        state = logical_start(0, Fraction(1))
        t = 0
        for _ in range(100):
            t += int(rng.integers(1, 10 * S))
            before = logical_read(state, t)
            new_rate = Fraction(10**12 + int(rng.integers(-10**8, 10**8)), 10**12)
            state = logical_rebase(state, t, new_rate)
            assert logical_read(state, t) == before

    def test_monotone_across_rebases(self):
        rng = np.random.default_rng(17)
        state = logical_start(0, Fraction(1))
        t = 0
        prev = logical_read(state, 0)
        for _ in range(300):
            t += int(rng.integers(1, S))
            if rng.random() < 0.3:
                rate = Fraction(10**12 + int(rng.integers(-10**8, 10**8)), 10**12)
                state = logical_rebase(state, t, rate)
            value = logical_read(state, t)
            assert value >= prev
            prev = value

    def test_reading_across_rebase_is_continuous_to_2ps(self):
        for r_old, r_new in [(Fraction(1), Fraction(10001, 10000)),
                             (Fraction(10001, 10000), Fraction(1)),
                             (Fraction(100005, 100000), Fraction(100005, 100000))]:
            state = LogicalClockState(0, Fraction(0), r_old)
            rebased = logical_rebase(state, 50 * S, r_new)
            before = logical_read(state, 50 * S - 1)
            after = logical_read(rebased, 50 * S + 1)
            assert abs(after - before) < 2

    def test_bad_rates_rejected(self):
        with pytest.raises(ConfigurationError):
            LogicalClockState(0, Fraction(0), Fraction(0))
        state = logical_start(0, Fraction(1))
        with pytest.raises(ValueError):
            logical_read(state, -1)
        with pytest.raises(ValueError):
            logical_rebase(state, -1, Fraction(1))
