"""Sinkhorn proxy-label distillation on synthetic long-tailed noisy data."""

from ._core import (
    DsinkError,
    __version__,
    allocate_proxies,
    dsink_loss,
    evaluate,
    generate_dataset,
    load_cache,
    load_dataset,
    naive_distill_loss,
    ot_oracle,
    predict,
    resolve_config,
    sinkhorn_solve,
)

__all__ = [
    "DsinkError",
    "__version__",
    "allocate_proxies",
    "dsink_loss",
    "evaluate",
    "generate_dataset",
    "load_cache",
    "load_dataset",
    "naive_distill_loss",
    "ot_oracle",
    "predict",
    "resolve_config",
    "sinkhorn_solve",
]
