"""Weakly-supervised temporal action localization toolkit."""

try:
    from ._core import *  # noqa: F401,F403  (installed package layout)
except ImportError:  # build-tree layout: _core.so sits directly on sys.path
    from _core import *  # noqa: F401,F403

__all__ = [
    "svd",
    "log_condition_number",
    "abs_det",
    "generate_synthetic",
    "train",
    "infer",
    "evaluate",
    "forward",
    "gradcheck",
    "pdmi_study",
    "ablate",
]
