"""Quantized matrix multiplication with an exact integer core.

The int8 codes are multiplied and accumulated in integer arithmetic
(int32 when the reduction depth guarantees no overflow, int64 otherwise),
so the kernel itself introduces no rounding: all error in a quantized
product comes from quantizing the operands.  Scales are applied as an
epilogue, row scales then column scales, which is the factored evaluation
of the rank-1 outer product of the two scale vectors.  Per-group weights
rescale each group's partial sum before the column epilogue; group
partial sums are combined in float64 in ascending group order so results
are reproducible.
"""

from __future__ import annotations

import numpy as np

from .quantizer import AXIS_COLUMN, AXIS_ROW, QuantizedTensor

_INT32_MAX = 2**31 - 1


def _acc_dtype(depth: int, qmax_w: int, qmax_a: int) -> np.dtype:
    return np.dtype(np.int32) if depth * qmax_w * qmax_a <= _INT32_MAX else np.dtype(np.int64)


def _check_operands(wq: QuantizedTensor, aq: QuantizedTensor) -> None:
    if wq.axis != AXIS_ROW:
        raise ValueError("weight operand must carry row-wise scales")
    if aq.axis != AXIS_COLUMN or aq.grouping.is_per_group:
        raise ValueError("activation operand must be per-channel with column-wise scales")
    if wq.values.shape[1] != aq.values.shape[0]:
        raise ValueError(
            f"inner dimensions do not match: {wq.values.shape} x {aq.values.shape}"
        )


def matmul_per_channel(wq: QuantizedTensor, aq: QuantizedTensor) -> np.ndarray:
    """Multiply per-channel quantized weight (N x M) and activation (M x P).

    Returns the dequantized float64 product: the exact integer
    accumulation scaled by s_w[i] * s_a[j] per output element.
    """
    _check_operands(wq, aq)
    if wq.grouping.is_per_group:
        raise ValueError("weight operand is per-group; use matmul_per_group")
    m = wq.values.shape[1]
    acc_dtype = _acc_dtype(m, wq.qmax, aq.qmax)
    acc = wq.values.astype(acc_dtype) @ aq.values.astype(acc_dtype)
    out = acc.astype(np.float64) * wq.scales.astype(np.float64)[:, None]
    return out * aq.scales.astype(np.float64)[None, :]


def matmul_per_group(wq: QuantizedTensor, aq: QuantizedTensor) -> np.ndarray:
    """Multiply a per-group quantized weight by a per-channel activation.

    Each group of g columns is accumulated exactly in integers, rescaled
    by its own weight scale, and added into a float64 accumulator; the
    column scales are applied last.  With g = M this is bit-identical to
    :func:`matmul_per_channel`.
    """
    _check_operands(wq, aq)
    if not wq.grouping.is_per_group:
        raise ValueError("weight operand is per-channel; use matmul_per_channel")
    n, m = wq.values.shape
    p = aq.values.shape[1]
    g = wq.grouping.group_size
    acc_dtype = _acc_dtype(g, wq.qmax, aq.qmax)
    w_scales = wq.scales.astype(np.float64)

    acc = np.zeros((n, p), dtype=np.float64)
    for k in range(m // g):
        part = (
            wq.values[:, k * g : (k + 1) * g].astype(acc_dtype)
            @ aq.values[k * g : (k + 1) * g, :].astype(acc_dtype)
        )
        acc += part.astype(np.float64) * w_scales[:, k][:, None]
    return acc * aq.scales.astype(np.float64)[None, :]


def reference_matmul_fp(w: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Float64 reference product with a fixed accumulation order.

    Every output element is accumulated over the inner index in ascending
    order, independent of any BLAS backend, so the result is reproducible
    and usable as an oracle for the integer kernels.
    """
    w = np.asarray(w)
    a = np.asarray(a)
    if w.ndim != 2 or a.ndim != 2 or w.shape[1] != a.shape[0]:
        raise ValueError(f"dimension mismatch: {w.shape} x {a.shape}")
    w64 = w.astype(np.float64)
    a64 = a.astype(np.float64)
    out = np.zeros((w.shape[0], a.shape[1]), dtype=np.float64)
    for k in range(w.shape[1]):
        out += w64[:, k : k + 1] * a64[k : k + 1, :]
    return out
