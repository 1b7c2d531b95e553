"""Spatial group-wise enhance (SGE) in numpy.

The operator lives in :mod:`sge.op`; layers and the toy model in :mod:`sge.nn`;
training in :mod:`sge.train`; diagnostics in :mod:`sge.stats`; file formats in
:mod:`sge.io`.
"""
from .errors import SgeError
from .op import SgeGradients, SgeParams, count_flops, count_params, sge_backward, sge_forward
from .tensor import GroupedView, as_feature_map, group_merge, group_split

__all__ = [
    "SgeError", "SgeGradients", "SgeParams", "GroupedView", "as_feature_map", "count_flops", "count_params",
    "group_merge", "group_split", "sge_backward", "sge_forward",
]
__version__ = "0.1.0"
