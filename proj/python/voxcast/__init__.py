"""Python bindings for the voxcast toolkit."""

from ._core import (  # noqa: F401
    Checkpoint,
    ClassifierConfig,
    EvalResult,
    GridStore,
    MetricReport,
    SimulatorConfig,
    TrainPlan,
    arch_label,
    default_grid_spec_bounds,
    eval_classifier,
    eval_simulation,
    gen_dataset,
    load_checkpoint,
    load_store,
    make_windows,
    prf,
    render_csv,
    render_table,
    run_adjoint_suite,
    run_gradient_suite,
    save_checkpoint,
    split_rows,
    train_classifier,
    train_simulator,
    voxelize,
)

__all__ = [name for name in dir() if not name.startswith("_")]
