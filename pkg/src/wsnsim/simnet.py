"""Discrete-event engine: chain topology, delay model, and scenario execution.

A scenario is a chain of ``num_layers + 1`` nodes: the head (reference clock)
at the top, the sensor at the bottom, gateways in between.  Layer ``i`` is the
master/slave pair (node ``i-1``, node ``i``) joined by link ``i``.  Two
multi-hop modes are supported:

* ``relaying``: gateways pass beacons through unchanged; the head runs one
  end-to-end exchange per measurement and compensates accumulated gateway
  processing delay.
* ``ttg`` (time-translating gateways): every layer runs its own exchange and
  the measurement-time estimate is lifted one layer per hop until the head.

All randomness flows through named substreams of the scenario seed, so equal
scenarios produce byte-identical traces, and paired scenarios (same seed,
different mode or clock bounds) share clock draws, measurement times, and
per-link jitter sequences.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import protocol
from .timebase import (
    ClockParams,
    ConfigurationError,
    EffectiveClock,
    REFERENCE_CLOCK,
    Ticks,
    _truncated_normal,
    compose_clock,
    hw_invert,
    hw_read,
    ps_from_seconds,
    round_half_away,
    sample_clock_params,
)

MODE_RELAYING = "relaying"
MODE_TTG = "ttg"
_MODE_ALIASES = {
    "relaying": MODE_RELAYING,
    "packet_relaying": MODE_RELAYING,
    "ttg": MODE_TTG,
    "time_translating": MODE_TTG,
    "time_translating_gateways": MODE_TTG,
}

SCHEDULE_POISSON = "poisson"
SCHEDULE_PERIODIC = "periodic"  # experimental alternative to the default

MAX_LAYERS = 64

# Substream domains under the scenario seed.
_STREAM_CLOCK = 0
_STREAM_MEASURE = 1
_STREAM_REQUESTS = 2
_STREAM_JITTER = 3
_STREAM_PD = 4

_DOWN = 0
_UP = 1

EXCLUDED_WARMUP = "warmup"
EXCLUDED_NO_SYNC = "no_sync"


def normalize_mode(mode: str) -> str:
    try:
        return _MODE_ALIASES[mode]
    except KeyError:
        raise ConfigurationError(
            f"unknown mode {mode!r}; expected one of {sorted(set(_MODE_ALIASES))}"
        ) from None


@dataclass(frozen=True, slots=True)
class GatewayPd:
    """Gateway processing-delay model: zero, constant, or exponential."""

    kind: str = "zero"
    value_s: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("zero", "constant", "exponential"):
            raise ConfigurationError(f"unknown gateway_pd kind {self.kind!r}")
        if self.value_s < 0:
            raise ConfigurationError("gateway_pd value must be non-negative")

    @staticmethod
    def parse(text: str) -> "GatewayPd":
        """Parse ``zero``, ``const:SECONDS``, or ``exp:MEAN_SECONDS``."""
        if text == "zero":
            return GatewayPd()
        for prefix, kind in (("const:", "constant"), ("exp:", "exponential")):
            if text.startswith(prefix):
                return GatewayPd(kind=kind, value_s=float(text[len(prefix):]))
        raise ConfigurationError(f"cannot parse gateway_pd {text!r}")

    def __str__(self) -> str:
        if self.kind == "zero":
            return "zero"
        tag = "const" if self.kind == "constant" else "exp"
        return f"{tag}:{self.value_s:g}"


@dataclass(frozen=True, slots=True)
class Scenario:
    """One simulation configuration; defaults follow the evaluation setup."""

    num_layers: int = 1
    duration_s: float = 3600.0
    n_measurements: int = 100
    mode: str = MODE_RELAYING
    link_distance_m: float = 100.0
    propagation_speed_mps: float = 3.0e8
    jitter_std_s: float = 1.0e-9
    gateway_pd: GatewayPd = GatewayPd()
    request_mean_interval_s: float = 10.0
    skew_bound_ppm: float = 100.0
    offset_bound_s: float = 1.0
    seed: int = 0
    pd_compensation: bool = True
    request_schedule: str = SCHEDULE_POISSON
    force_rate_one: bool = False  # diagnostic: pin the recovered rate to 1

    def validated(self) -> "Scenario":
        if not 1 <= self.num_layers <= MAX_LAYERS:
            raise ConfigurationError(
                f"num_layers must be in [1, {MAX_LAYERS}], got {self.num_layers}"
            )
        if self.duration_s <= 0:
            raise ConfigurationError("duration_s must be positive")
        if self.n_measurements < 0:
            raise ConfigurationError("n_measurements must be non-negative")
        if self.link_distance_m <= 0:
            raise ConfigurationError("link_distance_m must be positive")
        if self.propagation_speed_mps <= 0:
            raise ConfigurationError("propagation_speed_mps must be positive")
        if self.jitter_std_s < 0:
            raise ConfigurationError("jitter_std_s must be non-negative")
        if self.request_mean_interval_s <= 0:
            raise ConfigurationError("request_mean_interval_s must be positive")
        if self.skew_bound_ppm < 0:
            raise ConfigurationError("skew_bound_ppm must be non-negative")
        if self.offset_bound_s < 0:
            raise ConfigurationError("offset_bound_s must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must fit in 64 bits")
        if self.request_schedule not in (SCHEDULE_POISSON, SCHEDULE_PERIODIC):
            raise ConfigurationError(
                f"unknown request_schedule {self.request_schedule!r}"
            )
        return replace(self, mode=normalize_mode(self.mode))


@dataclass(frozen=True, slots=True)
class Link:
    """One hop of the chain; index matches its layer (1-based)."""

    index: int
    propagation_ps: int
    jitter_std_s: float


@dataclass(frozen=True, slots=True)
class Topology:
    clocks: Tuple[EffectiveClock, ...]
    links: Tuple[Link, ...]

    @property
    def num_layers(self) -> int:
        return len(self.links)


@dataclass(slots=True)
class MeasurementRecord:
    """Ground truth and head-side estimate for one sensor measurement."""

    index: int
    t_true_ps: int
    t_est_ps: Optional[int] = None
    excluded: bool = False
    reason: str = ""
    request_jitters_ps: Tuple[int, ...] = ()
    response_jitters_ps: Tuple[int, ...] = ()

    @property
    def error_ps(self) -> Optional[int]:
        if self.t_est_ps is None:
            return None
        return self.t_est_ps - self.t_true_ps


@dataclass(slots=True)
class RunResult:
    scenario: Scenario
    records: List[MeasurementRecord]
    trace: Optional[List[str]] = None

    @property
    def used_records(self) -> List[MeasurementRecord]:
        return [r for r in self.records if not r.excluded]

    @property
    def n_used(self) -> int:
        return len(self.used_records)

    @property
    def n_excluded(self) -> int:
        return len(self.records) - self.n_used


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def _chain_params(
    rng: np.random.Generator, skew_bound_ppm: float, offset_bound_s: float
) -> ClockParams:
    # Zero bounds mean "exactly nominal" and consume no draws, so sweeps over
    # one bound leave the other parameter's draws untouched.
    if skew_bound_ppm > 0 and offset_bound_s > 0:
        return sample_clock_params(rng, skew_bound_ppm, offset_bound_s)
    ratio = 1.0
    offset = 0.0
    if skew_bound_ppm > 0:
        bound = skew_bound_ppm * 1e-6
        ratio = 1.0 + _truncated_normal(rng, bound / 3.0, bound)
    if offset_bound_s > 0:
        offset = _truncated_normal(rng, offset_bound_s / 3.0, offset_bound_s)
    return ClockParams(ratio=ratio, offset_s=offset)


def build_chain(scenario: Scenario, rng: np.random.Generator) -> Topology:
    """Sample per-layer clock relations and compose them down the chain."""
    propagation_ps = ps_from_seconds(
        scenario.link_distance_m / scenario.propagation_speed_mps
    )
    clocks = [REFERENCE_CLOCK]
    links = []
    for layer in range(1, scenario.num_layers + 1):
        params = _chain_params(rng, scenario.skew_bound_ppm, scenario.offset_bound_s)
        clocks.append(compose_clock(clocks[-1], params))
        links.append(
            Link(index=layer, propagation_ps=propagation_ps,
                 jitter_std_s=scenario.jitter_std_s)
        )
    return Topology(clocks=tuple(clocks), links=tuple(links))


def sample_measurement_times(
    rng: np.random.Generator, n: int, duration_s: float
) -> List[int]:
    """Poisson measurement process conditioned on exactly n arrivals.

    Conditioning makes the count fixed across runs (comparable MSE
    denominators), which reduces to n sorted uniforms over the horizon.
    """
    if n == 0:
        return []
    times = np.sort(rng.uniform(0.0, duration_s, size=n))
    return [ps_from_seconds(float(t)) for t in times]


def sample_link_delay(rng: np.random.Generator, link: Link) -> int:
    """One-way delay for a single transmission: propagation plus jitter.

    Jitter is zero-mean normal, redrawn in the (practically unreachable)
    case that it would drive the total delay non-positive.
    """
    if link.jitter_std_s == 0:
        return link.propagation_ps
    while True:
        delay = link.propagation_ps + ps_from_seconds(
            float(rng.normal(0.0, link.jitter_std_s))
        )
        if delay > 0:
            return delay


def schedule_requests(rng: np.random.Generator, scenario: Scenario) -> List[int]:
    """Emission times for one master's request stream over the horizon."""
    times: List[int] = []
    if scenario.request_schedule == SCHEDULE_PERIODIC:
        k = 1
        while k * scenario.request_mean_interval_s < scenario.duration_s:
            times.append(ps_from_seconds(k * scenario.request_mean_interval_s))
            k += 1
    else:
        t = 0.0
        while True:
            t += float(rng.exponential(scenario.request_mean_interval_s))
            if t >= scenario.duration_s:
                break
            times.append(ps_from_seconds(t))
    # Guard the strict monotonicity the rate estimator requires; a collision
    # after rounding to ps has vanishing probability but costs nothing.
    for i in range(1, len(times)):
        if times[i] <= times[i - 1]:
            times[i] = times[i - 1] + 1
    return times


def ground_truth(topology: Topology, node: int, t_hw: Ticks) -> Ticks:
    """Reference time at which a node's hardware clock showed ``t_hw``."""
    return hw_invert(topology.clocks[node], t_hw)


# Event kinds.  Forwarding after a processing hold is scheduled as its own
# event so timestamps and pairing reflect the true departure instant.
_EMIT_REQUEST = "emit_request"
_DELIVER = "deliver_message"
_MEASUREMENT = "measurement"
_FORWARD = "forward_response"


@dataclass(frozen=True, slots=True)
class _Transit:
    """Bookkeeping that rides along with an in-flight response."""

    index: int
    warm: bool
    request_jitters: Tuple[int, ...]
    response_jitters: Tuple[int, ...]


class _Simulation:
    def __init__(self, scenario: Scenario, collect_trace: bool) -> None:
        sc = scenario.validated()
        self.sc = sc
        self.n_layers = sc.num_layers
        self.topology = build_chain(sc, _stream(sc.seed, _STREAM_CLOCK))
        self.clocks = self.topology.clocks
        self.links = self.topology.links
        self.trace: Optional[List[str]] = [] if collect_trace else None
        self.records: List[Optional[MeasurementRecord]] = [None] * sc.n_measurements

        # Slave-side sync state per node (node i is the slave of layer i).
        # In relaying mode only the sensor synchronizes.
        self.sync: Dict[int, protocol.LayerSyncState] = {
            node: protocol.LayerSyncState() for node in range(1, self.n_layers + 1)
        }
        # Warm-up: beyond needing two beacons, a rate estimate whose
        # observation span is still shorter than one request interval is
        # jitter-dominated; measurements relying on it are excluded.
        self._min_span_ps = ps_from_seconds(sc.request_mean_interval_s)
        # Down-path jitters of each slave's most recent request, for records.
        self.last_req_jitters: Dict[int, Tuple[int, ...]] = {}

        self._jitter_rngs: Dict[Tuple[int, int], np.random.Generator] = {}
        self._pd_rngs: Dict[int, np.random.Generator] = {}

        self._queue: List[tuple] = []
        self._seq = 0
        self._last_dispatch = None

        self.meas_times = sample_measurement_times(
            _stream(sc.seed, _STREAM_MEASURE), sc.n_measurements, sc.duration_s
        )
        if sc.mode == MODE_RELAYING:
            request_layers = [1]
        else:
            request_layers = list(range(1, self.n_layers + 1))
        for layer in request_layers:
            emissions = schedule_requests(
                _stream(sc.seed, _STREAM_REQUESTS, layer), sc
            )
            for t in emissions:
                self._push(t, _EMIT_REQUEST, layer)
        for index, t in enumerate(self.meas_times):
            self._push(t, _MEASUREMENT, index)

    # -- queue plumbing -----------------------------------------------------

    def _push(self, time_ps: int, kind: str, *payload) -> None:
        heapq.heappush(self._queue, (time_ps, self._seq, kind, payload))
        self._seq += 1

    def _emit_trace(self, t: int, seq: int, kind: str, node: int, fields: str) -> None:
        self.trace.append(f"{t}|{seq}|{kind}|node{node}|{fields}")

    def _jitter_rng(self, link_index: int, direction: int) -> np.random.Generator:
        key = (link_index, direction)
        rng = self._jitter_rngs.get(key)
        if rng is None:
            rng = _stream(self.sc.seed, _STREAM_JITTER, link_index, direction)
            self._jitter_rngs[key] = rng
        return rng

    def _pd_hold_ticks(self, node: int) -> int:
        pd = self.sc.gateway_pd
        if pd.kind == "zero":
            return 0
        if pd.kind == "constant":
            return ps_from_seconds(pd.value_s)
        rng = self._pd_rngs.get(node)
        if rng is None:
            rng = _stream(self.sc.seed, _STREAM_PD, node)
            self._pd_rngs[node] = rng
        return ps_from_seconds(float(rng.exponential(pd.value_s)))

    def _warmed(self, sync: protocol.LayerSyncState) -> bool:
        if not sync.warmed_up:
            return False
        span = sync.scfr.last_pair[0] - sync.scfr.first_pair[0]
        return span >= self._min_span_ps

    def _hold_ref_ps(self, node: int, hold_ticks: int) -> int:
        # Hold time elapses on the gateway's own clock; convert for scheduling.
        if hold_ticks == 0:
            return 0
        return max(0, round_half_away(Fraction(hold_ticks) / self.clocks[node].ratio_eff))

    # -- main loop ------------------------------------------------------------

    def run(self) -> RunResult:
        handlers = {
            _EMIT_REQUEST: self._on_emit_request,
            _DELIVER: self._on_deliver,
            _MEASUREMENT: self._on_measurement,
            _FORWARD: self._on_forward_response,
        }
        while self._queue:
            t, seq, kind, payload = heapq.heappop(self._queue)
            if self._last_dispatch is not None and t < self._last_dispatch:
                raise RuntimeError(
                    f"event time went backwards: {t} after {self._last_dispatch}"
                )
            self._last_dispatch = t
            handlers[kind](t, seq, *payload)
        missing = [i for i, r in enumerate(self.records) if r is None]
        if missing:
            raise RuntimeError(f"measurements left unaccounted: {missing}")
        return RunResult(scenario=self.sc, records=list(self.records), trace=self.trace)

    # -- handlers -------------------------------------------------------------

    def _on_emit_request(self, t: int, seq: int, layer: int) -> None:
        master = layer - 1
        beacon = protocol.RequestBeacon(origin_stamp=hw_read(self.clocks[master], t))
        if self.trace is not None:
            self._emit_trace(
                t, seq, _EMIT_REQUEST, master,
                protocol.format_message(self.sc.mode, layer, beacon),
            )
        self._send_request(t, layer, beacon, ())

    def _send_request(
        self, t: int, link_index: int, beacon: protocol.RequestBeacon,
        jitters: Tuple[int, ...],
    ) -> None:
        link = self.links[link_index - 1]
        delay = sample_link_delay(self._jitter_rng(link_index, _DOWN), link)
        jitter = delay - link.propagation_ps
        self._push(t + delay, _DELIVER, link_index, _DOWN, beacon,
                   jitters + (jitter,))

    def _on_deliver(self, t: int, seq: int, link_index: int, direction: int,
                    message, extra) -> None:
        if direction == _DOWN:
            self._on_request_arrival(t, seq, link_index, message, extra)
        else:
            self._on_response_arrival(t, seq, link_index, message, extra)

    def _on_request_arrival(
        self, t: int, seq: int, link_index: int, beacon: protocol.RequestBeacon,
        jitters: Tuple[int, ...],
    ) -> None:
        node = link_index
        if self.trace is not None:
            self._emit_trace(
                t, seq, _DELIVER, node,
                f"link={link_index},dir=down,"
                + protocol.format_message(self.sc.mode, link_index, beacon),
            )
        if self.sc.mode == MODE_RELAYING and node < self.n_layers:
            # Relay gateways re-emit the request at the same instant.
            self._send_request(t, link_index + 1,
                               protocol.gateway_relay_on_request(beacon), jitters)
            return
        arrival_hw = hw_read(self.clocks[node], t)
        override = Fraction(1) if self.sc.force_rate_one else None
        self.sync[node] = protocol.sensor_on_request(
            self.sync[node], beacon, arrival_hw, rate_override=override
        )
        self.last_req_jitters[node] = jitters

    def _on_measurement(self, t: int, seq: int, index: int) -> None:
        sensor = self.n_layers
        if self.trace is not None:
            self._emit_trace(t, seq, _MEASUREMENT, sensor, f"index={index}")
        sync = self.sync[sensor]
        if not sync.has_request:
            self.records[index] = MeasurementRecord(
                index=index, t_true_ps=t, excluded=True, reason=EXCLUDED_NO_SYNC
            )
            return
        response = protocol.sensor_on_measurement(sync, hw_read(self.clocks[sensor], t))
        transit = _Transit(
            index=index,
            warm=self._warmed(sync),
            request_jitters=self.last_req_jitters.get(sensor, ()),
            response_jitters=(),
        )
        self._send_response(t, sensor, response, transit)

    def _send_response(
        self, t: int, node: int, response: protocol.ResponseBeacon, transit: _Transit
    ) -> None:
        link = self.links[node - 1]
        delay = sample_link_delay(self._jitter_rng(node, _UP), link)
        transit = replace(
            transit,
            response_jitters=transit.response_jitters + (delay - link.propagation_ps,),
        )
        self._push(t + delay, _DELIVER, node, _UP, response, transit)

    def _on_response_arrival(
        self, t: int, seq: int, link_index: int,
        response: protocol.ResponseBeacon, transit: _Transit,
    ) -> None:
        node = link_index - 1
        if self.trace is not None:
            self._emit_trace(
                t, seq, _DELIVER, node,
                f"link={link_index},dir=up,"
                + protocol.format_message(self.sc.mode, link_index, response),
            )
        if self.sc.mode == MODE_RELAYING:
            if node == 0:
                self._head_record_relaying(t, response, transit)
                return
            hold = self._pd_hold_ticks(node)
            forwarded = protocol.gateway_relay_on_response(response, hold)
            depart = t + self._hold_ref_ps(node, hold)
            self._push(depart, _FORWARD, node, forwarded, transit)
            return
        # Time-translating mode: this node is the master of layer link_index.
        t4 = hw_read(self.clocks[node], t)
        rec = protocol.ExchangeRecord(
            t1=response.echo_t1, t2=response.t2, t3=response.t3, t4=t4, pd_total=0
        )
        estimate = protocol.ttg_master_on_response(rec, response.payload_time)
        if node == 0:
            self._record(transit, estimate)
            return
        hold = self._pd_hold_ticks(node)
        depart = t + self._hold_ref_ps(node, hold)
        self._push(depart, _FORWARD, node, estimate, transit)

    def _on_forward_response(self, t: int, seq: int, node: int, payload,
                             transit: _Transit) -> None:
        if self.sc.mode == MODE_RELAYING:
            response = payload
            if self.trace is not None:
                self._emit_trace(
                    t, seq, _FORWARD, node,
                    protocol.format_message(self.sc.mode, node, response),
                )
            self._send_response(t, node, response, transit)
            return
        # TTG: stamp this layer's response at the true departure instant,
        # pairing with the most recent request received before departure.
        estimate = payload
        sync = self.sync[node]
        if not sync.has_request:
            self._record_excluded(transit, EXCLUDED_NO_SYNC)
            return
        payload_logical = protocol.translate_up(estimate, sync)
        t3 = protocol.translate_up(hw_read(self.clocks[node], t), sync)
        response = protocol.ResponseBeacon(
            echo_t1=sync.last_req_origin_stamp,
            t2=sync.last_req_arrival_logical,
            t3=t3,
            payload_time=payload_logical,
            pd_total=0,
        )
        transit = replace(
            transit,
            warm=transit.warm and self._warmed(sync),
            request_jitters=self.last_req_jitters.get(node, ()) + transit.request_jitters,
        )
        if self.trace is not None:
            self._emit_trace(
                t, seq, _FORWARD, node,
                protocol.format_message(self.sc.mode, node, response),
            )
        self._send_response(t, node, response, transit)

    def _head_record_relaying(
        self, t: int, response: protocol.ResponseBeacon, transit: _Transit
    ) -> None:
        t4 = t  # head clock is the reference
        if self.sc.pd_compensation:
            t4 = protocol.compensate_processing_delay(t4, response.pd_total)
        rec = protocol.ExchangeRecord(
            t1=response.echo_t1, t2=response.t2, t3=response.t3, t4=t4,
            pd_total=response.pd_total,
        )
        theta = protocol.estimate_offset(rec)
        estimate = protocol.estimate_measurement_time(response.payload_time, theta)
        self._record(transit, estimate)

    def _record(self, transit: _Transit, estimate: Ticks) -> None:
        record = MeasurementRecord(
            index=transit.index,
            t_true_ps=self._true_time(transit.index),
            t_est_ps=round_half_away(estimate),
            excluded=not transit.warm,
            reason="" if transit.warm else EXCLUDED_WARMUP,
            request_jitters_ps=transit.request_jitters,
            response_jitters_ps=transit.response_jitters,
        )
        self.records[transit.index] = record

    def _record_excluded(self, transit: _Transit, reason: str) -> None:
        self.records[transit.index] = MeasurementRecord(
            index=transit.index,
            t_true_ps=self._true_time(transit.index),
            excluded=True,
            reason=reason,
            request_jitters_ps=transit.request_jitters,
            response_jitters_ps=transit.response_jitters,
        )

    def _true_time(self, index: int) -> int:
        # Measurement events are scheduled at their reference-time instants.
        return self.meas_times[index]


def run(scenario: Scenario, collect_trace: bool = False) -> RunResult:
    """Execute one scenario to completion.

    Emissions and measurements are confined to the horizon; the queue then
    drains so every measurement is accounted for, either with an estimate or
    with an exclusion reason.  Identical scenarios produce identical results
    byte for byte.
    """
    return _Simulation(scenario, collect_trace).run()
