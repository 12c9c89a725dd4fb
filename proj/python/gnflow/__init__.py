"""Physics-informed neural-network solvers for incompressible Navier-Stokes
benchmarks (Kovasznay, Beltrami, Taylor-Green), trained by Gauss-Newton
natural gradient with dense or matrix-free Gramian solves.

The heavy lifting lives in the compiled extension ``gnflow._core``; this
package re-exports its public surface.
"""

from gnflow._core import (
    LINE_SEARCH_GRID,
    AdamConfig,
    AdamState,
    Block,
    BlockLayout,
    CgResult,
    Checkpoint,
    CheckpointRow,
    CollocationSet,
    CollocationSpec,
    ConstraintMode,
    Embedding,
    ErrorReport,
    FlatParams,
    FlowProblem,
    GnngConfig,
    LossBreakdown,
    OptState,
    PointSet,
    ResidualAssembly,
    RunConfig,
    Topology,
    TrainReport,
    adam_learning_rate,
    adam_step,
    config_topology,
    configure_workers,
    default_collocation,
    default_iterations,
    emit_report,
    export_pushforward,
    glorot_init,
    gnng_step,
    gramian_damping,
    line_search_eta,
    load_checkpoint,
    make_problem,
    param_count,
    parse_config_file,
    predict_fields,
    relative_l2,
    report_csv_header,
    resolve_config,
    run_experiment,
    sample_collocation,
    save_checkpoint,
    solve_cg,
    solve_direct,
    solve_spd,
)

__all__ = [
    "LINE_SEARCH_GRID",
    "AdamConfig",
    "AdamState",
    "Block",
    "BlockLayout",
    "CgResult",
    "Checkpoint",
    "CheckpointRow",
    "CollocationSet",
    "CollocationSpec",
    "ConstraintMode",
    "Embedding",
    "ErrorReport",
    "FlatParams",
    "FlowProblem",
    "GnngConfig",
    "LossBreakdown",
    "OptState",
    "PointSet",
    "ResidualAssembly",
    "RunConfig",
    "Topology",
    "TrainReport",
    "adam_learning_rate",
    "adam_step",
    "config_topology",
    "configure_workers",
    "default_collocation",
    "default_iterations",
    "emit_report",
    "export_pushforward",
    "glorot_init",
    "gnng_step",
    "gramian_damping",
    "line_search_eta",
    "load_checkpoint",
    "make_problem",
    "param_count",
    "parse_config_file",
    "predict_fields",
    "relative_l2",
    "report_csv_header",
    "resolve_config",
    "run_experiment",
    "sample_collocation",
    "save_checkpoint",
    "solve_cg",
    "solve_direct",
    "solve_spd",
]

__version__ = "0.1.0"
