"""Multi-modal time-series urban-change monitoring toolkit."""

from ._core import (
    DeltamonError,
    Model,
    combine_variants,
    kappa_sweep,
    max_pool_over_time,
    param_count,
    pr_curve,
    roc_curve,
    run_cli,
    tanimoto_complement_loss,
)

__all__ = [
    "DeltamonError",
    "Model",
    "combine_variants",
    "kappa_sweep",
    "max_pool_over_time",
    "param_count",
    "pr_curve",
    "roc_curve",
    "run_cli",
    "tanimoto_complement_loss",
]
