"""Beacon formats, offset estimation, and per-node synchronization behaviors.

The master initiates every exchange: it stamps request beacons with its own
clock, and a slave replies only when it has measurement data, echoing the
request stamp together with its logical-clock timestamps.  The offset between
a slave's logical clock and its master falls out of the classic two-way
estimate, and a measurement time is lifted one layer at a time by mapping it
through the slave's rate-corrected logical clock before the master subtracts
the estimated offset.

Handlers are pure: one (state, event) pair in, a new state and zero or more
messages out.  Nothing here blocks or consults wall-clock time.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional

from .timebase import (
    LogicalClockState,
    ScfrState,
    Ticks,
    affine_time_map,
    logical_read,
    logical_rebase,
    logical_start,
    round_half_away,
    scfr_ratio,
    scfr_update,
)


class LayerNotWarmedUp(RuntimeError):
    """Raised when a slave is asked to reply before any request arrived."""


@dataclass(frozen=True, slots=True)
class RequestBeacon:
    """Downward beacon carrying the issuing master's departure stamp."""

    origin_stamp: Ticks


@dataclass(frozen=True, slots=True)
class ResponseBeacon:
    """Upward beacon with the slave-side timestamps of one exchange.

    ``payload_time`` is the measurement-time estimate expressed in the
    sender's logical clock; ``t3`` is the genuine departure time.  For a
    sensor the two coincide (bundle size 1, sent at the measurement instant).
    ``pd_total`` accumulates relay processing delay and stays 0 when
    gateways translate instead of relaying.
    """

    echo_t1: Ticks
    t2: Ticks
    t3: Ticks
    payload_time: Ticks
    pd_total: int = 0


@dataclass(frozen=True, slots=True)
class ExchangeRecord:
    """The (T1, T2, T3, T4) tuple of one exchange as seen by the master."""

    t1: Ticks
    t2: Ticks
    t3: Ticks
    t4: Ticks
    pd_total: int = 0


@dataclass(frozen=True, slots=True)
class LayerSyncState:
    """What a node tracks about the master one layer above it."""

    scfr: ScfrState = ScfrState()
    logical: Optional[LogicalClockState] = None
    last_req_arrival_hw: Optional[Ticks] = None
    last_req_arrival_logical: Optional[Fraction] = None
    last_req_origin_stamp: Optional[Ticks] = None

    @property
    def has_request(self) -> bool:
        return self.last_req_arrival_hw is not None

    @property
    def warmed_up(self) -> bool:
        """True once the rate estimate is backed by two beacons."""
        return self.scfr.ready


def estimate_offset(rec: ExchangeRecord) -> Fraction:
    """Two-way offset estimate ((T2 - T1) - (T4 - T3)) / 2.

    The caller applies processing-delay compensation to ``t4`` beforehand
    where that applies.
    """
    return (Fraction(rec.t2) - rec.t1 - (Fraction(rec.t4) - rec.t3)) / 2


def compensate_processing_delay(t4: Ticks, pd_total: int) -> Ticks:
    """Remove accumulated gateway hold time from the response arrival stamp."""
    if pd_total < 0:
        raise ValueError(f"pd_total must be non-negative, got {pd_total}")
    return t4 - pd_total


def estimate_measurement_time(payload_logical: Ticks, theta_hat: Ticks) -> Ticks:
    """Shift a slave-logical measurement time into the master's clock."""
    return payload_logical - theta_hat


def translate_up(t_lower_hw: Ticks, sync: LayerSyncState) -> Fraction:
    """Map a lower-layer time (this node's hardware clock) into logical time.

    Evaluates ``(t - T2*) / rate + T2`` on the request-arrival anchor, which
    agrees with this node's logical clock wherever both are defined.  The
    input may precede the anchor (a measurement estimate usually does, since
    the paired request can arrive after the measurement happened), so the
    affine map is applied directly.  The master above completes the lift by
    subtracting its offset estimate.
    """
    if not sync.has_request or sync.logical is None:
        raise LayerNotWarmedUp("no request received from master yet")
    return affine_time_map(
        t_lower_hw,
        sync.last_req_arrival_hw,
        sync.last_req_arrival_logical,
        sync.logical.rate_hat,
    )


def sensor_on_request(
    state: LayerSyncState,
    beacon: RequestBeacon,
    arrival_hw: Ticks,
    rate_override: Optional[Fraction] = None,
) -> LayerSyncState:
    """Fold a request arrival into the slave's synchronization state.

    Updates the rate estimator with (origin stamp, local arrival), rebases
    the logical clock at the arrival with the refreshed rate (1 until two
    beacons have been seen), and records the anchor for the next response.
    ``rate_override`` pins the rate instead, a diagnostic hook for checking
    the delay-asymmetry error decomposition with known-perfect recovery.
    """
    scfr = scfr_update(state.scfr, beacon.origin_stamp, arrival_hw)
    if rate_override is not None:
        rate = rate_override
    else:
        rate = scfr_ratio(scfr) if scfr.ready else Fraction(1)
    if state.logical is None:
        logical = logical_start(arrival_hw, rate)
    else:
        logical = logical_rebase(state.logical, arrival_hw, rate)
    # The rebase anchors the logical clock at this arrival, so the anchor
    # value is exactly the logical arrival time.
    return LayerSyncState(
        scfr=scfr,
        logical=logical,
        last_req_arrival_hw=arrival_hw,
        last_req_arrival_logical=logical.anchor_logical,
        last_req_origin_stamp=beacon.origin_stamp,
    )


def sensor_on_measurement(state: LayerSyncState, hw_now: Ticks) -> ResponseBeacon:
    """Build the immediate response for one measurement (bundle size 1)."""
    if not state.has_request or state.logical is None:
        raise LayerNotWarmedUp("measurement taken before any request arrived")
    t3 = logical_read(state.logical, hw_now)
    return ResponseBeacon(
        echo_t1=state.last_req_origin_stamp,
        t2=state.last_req_arrival_logical,
        t3=t3,
        payload_time=t3,
        pd_total=0,
    )


def gateway_relay_on_request(beacon: RequestBeacon) -> RequestBeacon:
    """Relay a request downward unchanged and without holding it."""
    return beacon


def gateway_relay_on_response(resp: ResponseBeacon, hold_hw_ticks: int) -> ResponseBeacon:
    """Relay a response upward after a processing hold.

    The hold is measured on the gateway's own hardware clock and added raw
    to ``pd_total``; relay gateways run no frequency recovery, so the stamp
    is deliberately not skew-corrected.
    """
    if hold_hw_ticks < 0:
        raise ValueError(f"hold must be non-negative, got {hold_hw_ticks}")
    if hold_hw_ticks == 0:
        return resp
    return replace(resp, pd_total=resp.pd_total + hold_hw_ticks)


def ttg_master_on_response(rec: ExchangeRecord, payload_logical: Ticks) -> Ticks:
    """One translation step: this layer's measurement-time estimate.

    ``rec`` holds the layer's own genuine event timestamps (``t3`` is the
    actual response departure, not the payload); the payload is the lower
    layer's estimate already mapped into the slave's logical clock.
    """
    return estimate_measurement_time(payload_logical, estimate_offset(rec))


def format_message(mode: str, layer: int, message) -> str:
    """Canonical one-line dump of a beacon, all fields in integer ps."""
    if isinstance(message, RequestBeacon):
        return (
            f"{mode},{layer},request,"
            f"origin_stamp={round_half_away(message.origin_stamp)}"
        )
    if isinstance(message, ResponseBeacon):
        return (
            f"{mode},{layer},response,"
            f"echo_t1={round_half_away(message.echo_t1)},"
            f"t2={round_half_away(message.t2)},"
            f"t3={round_half_away(message.t3)},"
            f"payload_time={round_half_away(message.payload_time)},"
            f"pd_total={round_half_away(message.pd_total)}"
        )
    raise TypeError(f"unknown message type: {type(message).__name__}")
