"""Kronecker attention operators with cost models, hand-written gradients and a small CNN stack."""
from ._backend import BACKEND, available_backends
from .attention import (
    AttnConfig,
    CoeffNorm,
    attn,
    attn_pooled_2d,
    get_operator,
    kao_kv,
    kao_qkv,
    nonlocal_2d,
)
from .costmodel import MODEL_VERSION, madd_of, memory_of
from .grad import backward_attn, backward_attn_pooled_2d, backward_kao_kv, backward_kao_qkv, backward_nonlocal_2d, gradcheck
from .matvar import MatrixNormalKS, reconstruct, trace_identity_check
from .profiler import CostReport, audit_network, benchmark
from .tensor import ShapeError, fold_mode3, juxtapose_context, kronecker_sum, outer_sum, unfold_mode3

__version__ = "0.1.0"
