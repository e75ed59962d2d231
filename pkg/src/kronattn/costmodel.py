"""Analytic multiply-add and memory model.

MAdd model
    A matmul ``(a x b)(b x c)`` costs ``a*b*c``. Softmax, means, pooling,
    outer sums, batch norm and activations cost nothing. Counts are per
    sample. For attention with ``m`` queries, ``n`` keys/values and ``c``
    channels this gives ``2*m*n*c``, plus ``n*c*c`` when the value matrix
    goes through a ``c x c`` linear transform.

Memory model
    Sum of the operator's intermediate buffers (pooled keys/values, context
    matrix, coefficient matrix, softmax weights, attention output, and for
    KAO_QKV the outer-sum output tensor), times batch, times 4 bytes.
"""
from __future__ import annotations

from .tensor import pooled_size

MODEL_VERSION = "kronattn-cost-v1"
BYTES_PER_ELEMENT = 4

ATTENTION_OPS = ("regular", "pooled", "kao_kv", "kao_qkv")
ALIASES = {"attn": "regular", "nonlocal": "regular", "attn_pool": "pooled", "attn+pool": "pooled"}


class UnsupportedOperator(ValueError):
    pass


def canonical_op(op: str) -> str:
    return ALIASES.get(op.lower(), op.lower())


def attention_sizes(op: str, h: int, w: int) -> tuple[int, int]:
    """``(queries, keys)`` for an attention operator on an ``h x w`` map."""
    op = canonical_op(op)
    if op == "regular":
        return h * w, h * w
    if op == "pooled":
        return h * w, pooled_size(h) * pooled_size(w)
    if op == "kao_kv":
        return h * w, h + w
    if op == "kao_qkv":
        return h + w, h + w
    raise UnsupportedOperator(f"unsupported attention operator {op!r}")


def madd_of(op: str, shape, *, c_out: int | None = None, stride: int = 1, value_transform: bool = False) -> int:
    """Per-sample multiply-adds of one operator on an ``(h, w, c)`` input.

    Attention kinds: ``regular``, ``pooled``, ``kao_kv``, ``kao_qkv``
    (``value_transform`` adds the ``c x c`` projection of V). Layer kinds:
    ``conv1x1`` and ``conv3x3`` (need ``c_out``), ``dwconv3x3``,
    ``fully_connected`` (``shape`` = ``(1, 1, c_in)``); ``batchnorm``,
    ``activation``, ``avgpool`` and ``avgpool_global`` are free.
    """
    h, w, c = (int(v) for v in shape)
    op = canonical_op(op)
    ho, wo = -(-h // stride), -(-w // stride)
    if op in ATTENTION_OPS:
        m, n = attention_sizes(op, h, w)
        return 2 * m * n * c + (n * c * c if value_transform else 0)
    if op == "conv1x1":
        _need(c_out, op)
        return ho * wo * c * c_out
    if op == "conv3x3":
        _need(c_out, op)
        return ho * wo * 9 * c * c_out
    if op == "dwconv3x3":
        return ho * wo * 9 * c
    if op == "fully_connected":
        _need(c_out, op)
        return h * w * c * c_out
    if op in ("batchnorm", "activation", "avgpool", "avgpool_global", "concat"):
        return 0
    raise UnsupportedOperator(f"no MAdd model for operator {op!r}")


def _need(c_out, op):
    if c_out is None:
        raise ValueError(f"{op} needs c_out")


def memory_elements(op: str, shape) -> int:
    """Per-sample element count of an attention operator's intermediate buffers."""
    h, w, c = (int(v) for v in shape)
    op = canonical_op(op)
    m, n = attention_sizes(op, h, w)
    coeff = 2 * m * n  # coefficients and softmax weights
    if op == "regular":
        return coeff + c * m
    if op == "pooled":
        return c * n + coeff + c * m
    if op == "kao_kv":
        return c * n + coeff + c * m
    # kao_qkv: context, coefficients, attention output, outer-sum output
    return c * n + coeff + c * m + c * h * w


def memory_of(op: str, shape, batch: int = 1) -> int:
    """Bytes of intermediate buffers for ``batch`` samples under the 4-byte model."""
    if canonical_op(op) not in ATTENTION_OPS:
        raise UnsupportedOperator(f"no memory model for operator {op!r}")
    return memory_elements(op, shape) * batch * BYTES_PER_ELEMENT


def saving_pct(value: float, baseline: float) -> float:
    return 100.0 * (1.0 - value / baseline)
