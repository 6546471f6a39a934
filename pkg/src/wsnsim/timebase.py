"""Time representation, hardware-clock models, and rate-corrected logical clocks.

All reference-timeline event times are signed integer picoseconds.  Clock
reads, however, are carried as exact `fractions.Fraction` picosecond values:
an affine clock evaluated at an integer instant is a rational number, and
keeping it exact is what makes the zero-jitter scenarios of the simulator
land on zero error instead of accumulating rounding wobble.  To keep the
rationals cheap, every stored clock parameter is snapped onto a fixed grid
(1e-18 for rates, 1e-6 ps for offsets and logical values), which bounds all
denominators for the lifetime of a run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Tuple, Union

import numpy as np

PS_PER_SECOND = 10**12

# Grid denominators for stored clock quantities.  Rates snap to 1e-18
# (relative), offsets and logical-clock values to 1e-6 ps (one attosecond).
RATE_QUANTUM = 10**18
LOGICAL_QUANTUM = 10**6

Ticks = Union[int, Fraction]


class ConfigurationError(ValueError):
    """Raised for invalid sampling or scenario parameters."""


class NonMonotonicBeacon(ValueError):
    """Raised when a beacon's departure stamp does not advance."""


class RateUnavailable(RuntimeError):
    """Raised when fewer than two beacon pairs have been observed."""


def round_half_away(value: Ticks) -> int:
    """Round to the nearest integer picosecond, ties away from zero."""
    if isinstance(value, int):
        return value
    num, den = value.as_integer_ratio()
    quot, rem = divmod(num, den)
    rem2 = 2 * rem
    if rem2 > den:
        return quot + 1
    if rem2 < den:
        return quot
    return quot + 1 if num > 0 else quot


def ps_from_seconds(seconds: float) -> int:
    """Convert float seconds to integer picoseconds, ties away from zero."""
    scaled = seconds * PS_PER_SECOND
    return int(math.copysign(math.floor(abs(scaled) + 0.5), scaled))


def seconds_from_ps(ps: Ticks) -> float:
    return float(ps) / PS_PER_SECOND


def _as_ratio(value: Ticks) -> Tuple[int, int]:
    if isinstance(value, int):
        return value, 1
    return value.as_integer_ratio()


def _snap_ratio(num: int, den: int, quantum: int) -> Fraction:
    # den > 0 required; nearest multiple of 1/quantum, ties to even.
    quot, rem = divmod(num * quantum, den)
    rem2 = 2 * rem
    if rem2 > den or (rem2 == den and quot & 1):
        quot += 1
    return Fraction(quot, quantum)


def snap(value: Ticks, quantum: int = LOGICAL_QUANTUM) -> Fraction:
    """Snap a rational onto the 1/quantum grid (nearest, ties to even)."""
    if isinstance(value, int):
        return Fraction(value)
    num, den = value.as_integer_ratio()
    return _snap_ratio(num, den, quantum)


@dataclass(frozen=True, slots=True)
class ClockParams:
    """Per-link clock relation: slave hardware time = ratio * master + offset."""

    ratio: float
    offset_s: float

    def __post_init__(self) -> None:
        if self.ratio <= 0:
            raise ConfigurationError(f"clock ratio must be positive, got {self.ratio}")


@dataclass(frozen=True, slots=True)
class EffectiveClock:
    """A node's hardware clock expressed directly against the reference clock.

    ``hw = ratio_eff * t_ref + offset_eff_ps`` with both coefficients exact
    rationals on the storage grid.  The reference node itself uses the
    identity clock (ratio 1, offset 0, exactly).
    """

    ratio_eff: Fraction
    offset_eff_ps: Fraction
    is_identity: bool = field(init=False, compare=False)
    _coeffs: Tuple[int, int, int, int] = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "is_identity", self.ratio_eff == 1 and self.offset_eff_ps == 0
        )
        rn, rd = self.ratio_eff.as_integer_ratio()
        on, od = self.offset_eff_ps.as_integer_ratio()
        object.__setattr__(self, "_coeffs", (rn, rd, on, od))


REFERENCE_CLOCK = EffectiveClock(Fraction(1), Fraction(0))


def sample_clock_params(
    rng: np.random.Generator, skew_bound_ppm: float, offset_bound_s: float
) -> ClockParams:
    """Draw per-link clock parameters from bounded normal distributions.

    The ratio is normal around 1 with standard deviation ``skew_bound_ppm/3``
    and rejection-resampled until it falls within the bound; the offset is
    handled the same way around 0 with bound ``offset_bound_s``.
    """
    if skew_bound_ppm <= 0:
        raise ConfigurationError(f"skew_bound_ppm must be positive, got {skew_bound_ppm}")
    if offset_bound_s <= 0:
        raise ConfigurationError(f"offset_bound_s must be positive, got {offset_bound_s}")
    bound = skew_bound_ppm * 1e-6
    ratio = 1.0 + _truncated_normal(rng, bound / 3.0, bound)
    offset = _truncated_normal(rng, offset_bound_s / 3.0, offset_bound_s)
    return ClockParams(ratio=ratio, offset_s=offset)


def _truncated_normal(rng: np.random.Generator, std: float, bound: float) -> float:
    while True:
        draw = rng.normal(0.0, std)
        if abs(draw) <= bound:
            return float(draw)


def compose_clock(parent: EffectiveClock, rel: ClockParams) -> EffectiveClock:
    """Chain a relative clock relation onto a parent's effective clock.

    ``child = rel.ratio * parent + rel.offset`` expanded against the
    reference clock.  The result is re-snapped onto the storage grid, which
    keeps chained compositions associative to well under a picosecond over
    the simulation horizon.
    """
    if parent.ratio_eff <= 0:
        raise ConfigurationError("parent ratio_eff must be positive")
    rel_ratio = Fraction(rel.ratio)
    rel_offset_ps = Fraction(rel.offset_s) * PS_PER_SECOND
    ratio = snap(rel_ratio * parent.ratio_eff, RATE_QUANTUM)
    offset = snap(rel_ratio * parent.offset_eff_ps + rel_offset_ps, LOGICAL_QUANTUM)
    return EffectiveClock(ratio_eff=ratio, offset_eff_ps=offset)


def hw_read(clock: EffectiveClock, t_ref: Ticks) -> Ticks:
    """Evaluate the hardware clock at a reference instant (exact)."""
    if clock.is_identity:
        return t_ref
    rn, rd, on, od = clock._coeffs
    tn, td = _as_ratio(t_ref)
    return Fraction(rn * tn * od + on * rd * td, rd * td * od)


def hw_invert(clock: EffectiveClock, t_hw: Ticks) -> Ticks:
    """Recover the reference instant at which the hardware clock read t_hw."""
    if clock.is_identity:
        return t_hw
    return (Fraction(t_hw) - clock.offset_eff_ps) / clock.ratio_eff


@dataclass(frozen=True, slots=True)
class ScfrState:
    """Frequency-recovery accumulator over received timestamped beacons.

    Only the first and the most recent (departure stamp, local arrival) pair
    are retained; the rate estimate is their cumulative ratio.
    """

    first_pair: Optional[Tuple[Ticks, Ticks]] = None
    last_pair: Optional[Tuple[Ticks, Ticks]] = None
    pair_count: int = 0

    @property
    def ready(self) -> bool:
        """True once a rate estimate is defined (two distinct departures)."""
        return (
            self.pair_count >= 2
            and self.last_pair is not None
            and self.first_pair is not None
            and self.last_pair[0] != self.first_pair[0]
        )


def scfr_update(state: ScfrState, departure_stamp: Ticks, arrival_hw: Ticks) -> ScfrState:
    """Fold one received beacon into the accumulator.

    Departure stamps must strictly increase; a stale stamp is rejected and
    the state is left untouched.
    """
    if state.last_pair is not None and departure_stamp <= state.last_pair[0]:
        raise NonMonotonicBeacon(
            f"departure stamp {departure_stamp} not after {state.last_pair[0]}"
        )
    pair = (departure_stamp, arrival_hw)
    first = state.first_pair if state.first_pair is not None else pair
    return ScfrState(first_pair=first, last_pair=pair, pair_count=state.pair_count + 1)


def scfr_ratio(state: ScfrState) -> Fraction:
    """Cumulative rate estimate: local elapsed over master elapsed."""
    if not state.ready:
        raise RateUnavailable("need at least two beacons with distinct departures")
    d0, a0 = state.first_pair
    d1, a1 = state.last_pair
    an1, ad1 = _as_ratio(a1)
    an0, ad0 = _as_ratio(a0)
    dn1, dd1 = _as_ratio(d1)
    dn0, dd0 = _as_ratio(d0)
    return Fraction((an1 * ad0 - an0 * ad1) * dd1 * dd0,
                    (dn1 * dd0 - dn0 * dd1) * ad1 * ad0)


@dataclass(frozen=True, slots=True)
class LogicalClockState:
    """Piecewise-linear, rate-corrected view of a local hardware clock.

    Within a segment the logical value advances by hardware elapsed divided
    by ``rate_hat``; each resynchronization starts a new segment anchored so
    the value is continuous.  No offset correction is applied.
    """

    anchor_hw: Ticks
    anchor_logical: Fraction
    rate_hat: Fraction

    def __post_init__(self) -> None:
        if self.rate_hat <= 0:
            raise ConfigurationError("rate_hat must be positive")


def logical_start(anchor_hw: Ticks, rate_hat: Fraction) -> LogicalClockState:
    """Initial segment: the logical clock starts at the current hardware time."""
    return LogicalClockState(
        anchor_hw=anchor_hw, anchor_logical=snap(anchor_hw), rate_hat=rate_hat
    )


def affine_time_map(
    t_hw: Ticks, anchor_hw: Ticks, anchor_logical: Ticks, rate: Fraction
) -> Fraction:
    """``anchor_logical + (t_hw - anchor_hw) / rate``, snapped to the grid.

    Shared kernel of the logical clock and the per-layer time translation;
    evaluated on integer pairs so each call costs one normalization.
    """
    tn, td = _as_ratio(t_hw)
    an, ad = _as_ratio(anchor_hw)
    ln, ld = _as_ratio(anchor_logical)
    rn, rd = _as_ratio(rate)
    dn = tn * ad - an * td
    dd = td * ad
    return _snap_ratio(ln * dd * rn + dn * rd * ld, ld * dd * rn, LOGICAL_QUANTUM)


def logical_read(state: LogicalClockState, t_hw: Ticks) -> Fraction:
    """Logical value at a hardware instant at or after the anchor."""
    if t_hw < state.anchor_hw:
        raise ValueError("logical_read before current anchor")
    return affine_time_map(t_hw, state.anchor_hw, state.anchor_logical, state.rate_hat)


def logical_rebase(
    state: LogicalClockState, new_anchor_hw: Ticks, new_rate: Fraction
) -> LogicalClockState:
    """Start a new segment at ``new_anchor_hw`` with an updated rate estimate.

    The new anchor value is the old segment's reading there, so the logical
    clock is continuous across the rebase by construction.
    """
    if new_anchor_hw < state.anchor_hw:
        raise ValueError("rebase anchor moved backwards")
    return LogicalClockState(
        anchor_hw=new_anchor_hw,
        anchor_logical=logical_read(state, new_anchor_hw),
        rate_hat=Fraction(new_rate),
    )
