"""Metrics, analytic and Monte Carlo oracles, sweeps, and result files.

The accuracy measure is the mean square error, in seconds squared, between a
measurement's reference time and the head's estimate of it.  Sweeps run a
grid of (mode, layer count, jitter level, seed) scenarios; rows are sorted
afterwards so parallel execution cannot change the output.
"""

from __future__ import annotations

import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from . import simnet
from .simnet import MeasurementRecord, RunResult, Scenario

plt.rcParams["svg.hashsalt"] = "wsnsim"

CSV_HEADER = ["mode", "num_layers", "jitter_std_s", "seed", "n_used", "n_excluded", "mse_s2"]
RECORDS_HEADER = ["index", "t_true_ps", "t_est_ps", "error_ps", "excluded", "reason"]

_PS2_PER_S2 = 10**24


class NoDataError(RuntimeError):
    """Raised when a metric is requested over zero usable records."""


def mse(records: Sequence[MeasurementRecord]) -> float:
    """Mean square estimate error in seconds squared, excluded records skipped.

    Errors are integer picoseconds, so the sum of squares is exact; the
    single float conversion happens at the end.
    """
    total = 0
    n = 0
    for record in records:
        if record.excluded or record.t_est_ps is None:
            continue
        err = record.t_est_ps - record.t_true_ps
        total += err * err
        n += 1
    if n == 0:
        raise NoDataError("no usable measurement records")
    return float(Fraction(total, n * _PS2_PER_S2))


def analytic_mse_relaying(num_layers: int, sigma_s: float) -> float:
    """First-order MSE prediction for the relaying mode: L * sigma^2 / 2.

    The offset-estimate error is half the difference between the summed
    request-path and response-path jitters, each a sum of ``num_layers``
    independent zero-mean normals with standard deviation ``sigma_s``.
    """
    if num_layers < 1:
        raise ValueError("num_layers must be >= 1")
    if sigma_s < 0:
        raise ValueError("sigma_s must be non-negative")
    return num_layers * sigma_s**2 / 2.0


def mc_mse_relaying(
    num_layers: int, sigma_s: float, n_trials: int, rng: np.random.Generator
) -> float:
    """Brute-force oracle: sample the estimator error directly, no simulator.

    Each trial draws the 2L per-hop jitters of one exchange and evaluates
    the two-way error (sum of down-jitters minus sum of up-jitters) / 2.
    """
    down = rng.normal(0.0, sigma_s, size=(n_trials, num_layers)).sum(axis=1)
    up = rng.normal(0.0, sigma_s, size=(n_trials, num_layers)).sum(axis=1)
    err = (down - up) / 2.0
    return float(np.mean(err * err))


@dataclass(frozen=True, slots=True)
class SweepRow:
    mode: str
    num_layers: int
    jitter_std_s: float
    seed: int
    n_used: int
    n_excluded: int
    mse_s2: float

    @property
    def sort_key(self) -> tuple:
        return (self.mode, self.num_layers, self.jitter_std_s, self.seed)


@dataclass(slots=True)
class SweepResult:
    rows: List[SweepRow]

    def filtered(
        self,
        mode: Optional[str] = None,
        num_layers: Optional[int] = None,
        jitter_std_s: Optional[float] = None,
    ) -> List[SweepRow]:
        out = []
        for row in self.rows:
            if mode is not None and row.mode != mode:
                continue
            if num_layers is not None and row.num_layers != num_layers:
                continue
            if jitter_std_s is not None and row.jitter_std_s != jitter_std_s:
                continue
            out.append(row)
        return out

    def mean_mse(self, **filters) -> float:
        rows = self.filtered(**filters)
        if not rows:
            raise NoDataError(f"no sweep rows match {filters}")
        return float(np.mean([row.mse_s2 for row in rows]))

    def grouped(self) -> Dict[Tuple[str, int, float], List[SweepRow]]:
        groups: Dict[Tuple[str, int, float], List[SweepRow]] = {}
        for row in self.rows:
            groups.setdefault((row.mode, row.num_layers, row.jitter_std_s), []).append(row)
        return groups

    def summary_lines(self) -> List[str]:
        lines = []
        for (mode, layers, sigma), rows in sorted(self.grouped().items()):
            values = [r.mse_s2 for r in rows]
            mean = float(np.mean(values))
            se = float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
            lines.append(
                f"mode={mode} layers={layers} jitter_std={sigma:g} "
                f"runs={len(values)} mean_mse={mean:g} se={se:g}"
            )
        return lines


def run_point(scenario: Scenario) -> SweepRow:
    """Run one sweep point and condense it to a result row."""
    result = simnet.run(scenario)
    try:
        value = mse(result.records)
    except NoDataError:
        value = float("nan")
    return SweepRow(
        mode=result.scenario.mode,
        num_layers=result.scenario.num_layers,
        jitter_std_s=result.scenario.jitter_std_s,
        seed=result.scenario.seed,
        n_used=result.n_used,
        n_excluded=result.n_excluded,
        mse_s2=value,
    )


def _safe_run_point(scenario: Scenario) -> SweepRow:
    try:
        return run_point(scenario)
    except Exception as exc:  # annotate the row, keep the sweep going
        print(f"warning: sweep point failed ({scenario.mode}, L={scenario.num_layers}, "
              f"seed={scenario.seed}): {exc}", file=sys.stderr)
        return SweepRow(
            mode=simnet.normalize_mode(scenario.mode),
            num_layers=scenario.num_layers,
            jitter_std_s=scenario.jitter_std_s,
            seed=scenario.seed,
            n_used=0,
            n_excluded=0,
            mse_s2=float("nan"),
        )


def _execute(points: List[Scenario], jobs: int) -> SweepResult:
    if jobs <= 1:
        rows = [_safe_run_point(p) for p in points]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_safe_run_point, points, chunksize=1))
    rows.sort(key=lambda row: row.sort_key)
    return SweepResult(rows=rows)


def sweep_grid(
    base: Scenario,
    modes: Sequence[str],
    layer_list: Sequence[int],
    sigma_list: Sequence[float],
    seeds: Sequence[int],
    jobs: int = 1,
) -> SweepResult:
    """Run every (mode, layers, jitter, seed) combination of the grid."""
    if not modes or not layer_list or not sigma_list or not seeds:
        raise ValueError("sweep grid must not be empty")
    points = []
    for mode in modes:
        for layers in layer_list:
            for sigma in sigma_list:
                for seed in seeds:
                    points.append(
                        simnet.Scenario(
                            **{
                                **_scenario_kwargs(base),
                                "mode": mode,
                                "num_layers": layers,
                                "jitter_std_s": sigma,
                                "seed": seed,
                            }
                        )
                    )
    return _execute(points, jobs)


def sweep_layers(
    base: Scenario,
    layer_list: Sequence[int],
    seeds: Sequence[int],
    modes: Sequence[str] = (simnet.MODE_RELAYING, simnet.MODE_TTG),
    jobs: int = 1,
) -> SweepResult:
    """Layer-count sweep at the base scenario's jitter level."""
    return sweep_grid(base, modes, layer_list, [base.jitter_std_s], seeds, jobs=jobs)


def sweep_jitter(
    base: Scenario,
    sigma_list: Sequence[float],
    seeds: Sequence[int],
    modes: Sequence[str] = (simnet.MODE_RELAYING, simnet.MODE_TTG),
    jobs: int = 1,
) -> SweepResult:
    """Jitter sweep at the base scenario's layer count."""
    return sweep_grid(base, modes, [base.num_layers], sigma_list, seeds, jobs=jobs)


def _scenario_kwargs(scenario: Scenario) -> dict:
    return {
        name: getattr(scenario, name) for name in scenario.__dataclass_fields__
    }


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(result: SweepResult, path: str, header_comment: Optional[str] = None) -> None:
    """Write sweep rows in the stable schema, one optional comment line first."""
    try:
        with open(path, "w", newline="") as handle:
            if header_comment:
                handle.write(f"# {header_comment}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for row in result.rows:
                writer.writerow(
                    [
                        row.mode,
                        row.num_layers,
                        _format_value(row.jitter_std_s),
                        row.seed,
                        row.n_used,
                        row.n_excluded,
                        _format_value(row.mse_s2),
                    ]
                )
    except OSError as exc:
        raise OSError(f"cannot write sweep CSV {path!r}: {exc}") from exc


def read_csv(path: str) -> SweepResult:
    """Parse a sweep CSV produced by :func:`write_csv` (comments skipped)."""
    rows = []
    try:
        with open(path, "r", newline="") as handle:
            lines = [line for line in handle if not line.startswith("#")]
    except OSError as exc:
        raise OSError(f"cannot read sweep CSV {path!r}: {exc}") from exc
    reader = csv.reader(lines)
    header = next(reader, None)
    if header != CSV_HEADER:
        raise ValueError(f"unexpected CSV header in {path!r}: {header}")
    for fields in reader:
        rows.append(
            SweepRow(
                mode=fields[0],
                num_layers=int(fields[1]),
                jitter_std_s=float(fields[2]),
                seed=int(fields[3]),
                n_used=int(fields[4]),
                n_excluded=int(fields[5]),
                mse_s2=float(fields[6]),
            )
        )
    return SweepResult(rows=rows)


def write_records_csv(
    result: RunResult, path: str, header_comment: Optional[str] = None
) -> None:
    """Per-measurement output of a single run."""
    try:
        with open(path, "w", newline="") as handle:
            if header_comment:
                handle.write(f"# {header_comment}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(RECORDS_HEADER)
            for record in result.records:
                writer.writerow(
                    [
                        record.index,
                        record.t_true_ps,
                        "" if record.t_est_ps is None else record.t_est_ps,
                        "" if record.error_ps is None else record.error_ps,
                        int(record.excluded),
                        record.reason,
                    ]
                )
    except OSError as exc:
        raise OSError(f"cannot write records CSV {path!r}: {exc}") from exc


_MODE_LABELS = {
    simnet.MODE_RELAYING: "packet relaying",
    simnet.MODE_TTG: "time-translating gateways",
}
_MODE_MARKERS = {simnet.MODE_RELAYING: "o", simnet.MODE_TTG: "s"}


def render_svg(result: SweepResult, path: str) -> None:
    """Line chart of mean MSE per mode, log vertical axis, written to file.

    The x axis is the layer count when it varies, otherwise the jitter
    level (log scale).  The output format follows the file extension, so
    ``.svg`` paths yield SVG and ``.png`` works too.
    """
    layers = sorted({row.num_layers for row in result.rows})
    sigmas = sorted({row.jitter_std_s for row in result.rows})
    by_jitter = len(sigmas) > 1 and len(layers) <= 1

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    groups = result.grouped()
    modes = sorted({row.mode for row in result.rows})
    for mode in modes:
        xs, ys = [], []
        for x in (sigmas if by_jitter else layers):
            key_rows: List[SweepRow] = []
            for (m, n_layers, sigma), rows in groups.items():
                if m != mode:
                    continue
                if by_jitter and sigma == x:
                    key_rows.extend(rows)
                elif not by_jitter and n_layers == x:
                    key_rows.extend(rows)
            values = [r.mse_s2 for r in key_rows if not np.isnan(r.mse_s2)]
            if values:
                xs.append(x)
                ys.append(float(np.mean(values)))
        if xs:
            ax.plot(xs, ys, marker=_MODE_MARKERS.get(mode, "x"),
                    label=_MODE_LABELS.get(mode, mode))
    ax.set_yscale("log")
    if by_jitter:
        ax.set_xscale("log")
        ax.set_xlabel("delay jitter standard deviation (s)")
    else:
        ax.set_xlabel("number of layers")
    ax.set_ylabel("mean MSE of estimated measurement time (s$^2$)")
    ax.grid(True, which="both", alpha=0.4)
    if modes:
        ax.legend()
    fig.tight_layout()
    try:
        fig.savefig(path, metadata={"Date": None} if path.endswith(".svg") else None)
    except OSError as exc:
        raise OSError(f"cannot write figure {path!r}: {exc}") from exc
    finally:
        plt.close(fig)
