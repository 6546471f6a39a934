"""Multi-hop WSN time-synchronization simulator and experiment harness."""

from .simnet import (
    GatewayPd,
    MeasurementRecord,
    RunResult,
    Scenario,
    MODE_RELAYING,
    MODE_TTG,
    build_chain,
    ground_truth,
    run,
)
from .experiments import (
    SweepResult,
    SweepRow,
    analytic_mse_relaying,
    mc_mse_relaying,
    mse,
    read_csv,
    render_svg,
    sweep_grid,
    sweep_jitter,
    sweep_layers,
    write_csv,
)

__version__ = "0.1.0"

__all__ = [
    "GatewayPd",
    "MeasurementRecord",
    "RunResult",
    "Scenario",
    "MODE_RELAYING",
    "MODE_TTG",
    "SweepResult",
    "SweepRow",
    "analytic_mse_relaying",
    "build_chain",
    "ground_truth",
    "mc_mse_relaying",
    "mse",
    "read_csv",
    "render_svg",
    "run",
    "sweep_grid",
    "sweep_jitter",
    "sweep_layers",
    "write_csv",
    "__version__",
]
