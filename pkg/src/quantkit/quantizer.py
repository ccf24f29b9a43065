"""Symmetric n-bit integer quantization with per-channel and per-group scales.

Weights are quantized row-wise: per-channel shares one scale factor per
output row, per-group splits each row into contiguous groups of
``group_size`` input columns with one scale each.  Activations are
quantized column-wise with one scale per column.  Scale factors are
computed and stored in float32; integer codes always fit int8 because the
supported bit widths top out at 8.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PER_CHANNEL = "per_channel"
PER_GROUP = "per_group"

AXIS_ROW = "row"
AXIS_COLUMN = "column"

_MIN_BITS = 2
_MAX_BITS = 8


@dataclass(frozen=True)
class QuantParams:
    """Bit width for symmetric integer quantization.

    The representable code range is [-qmax, qmax] with
    qmax = 2^(bits-1) - 1; the negative endpoint -2^(bits-1) is never
    emitted so the grid stays sign-symmetric.
    """

    bits: int = 8

    def __post_init__(self):
        if not isinstance(self.bits, int) or not _MIN_BITS <= self.bits <= _MAX_BITS:
            raise ValueError(
                f"bits must be an integer in [{_MIN_BITS}, {_MAX_BITS}], got {self.bits!r}"
            )

    @property
    def qmax(self) -> int:
        return (1 << (self.bits - 1)) - 1


@dataclass(frozen=True)
class GroupingScheme:
    """How elements share scale factors along the grouped dimension.

    ``per_channel`` uses one scale per row (weights) or per column
    (activations), i.e. the group spans the whole input dimension.
    ``per_group`` partitions each row into contiguous groups of
    ``group_size`` elements.  A per-group scheme whose size equals the
    input dimension is numerically identical to per-channel.
    """

    mode: str
    group_size: int | None = None

    def __post_init__(self):
        if self.mode not in (PER_CHANNEL, PER_GROUP):
            raise ValueError(f"unknown grouping mode {self.mode!r}")
        if self.mode == PER_GROUP:
            if not isinstance(self.group_size, int) or self.group_size < 1:
                raise ValueError(f"per-group size must be a positive integer, got {self.group_size!r}")
        elif self.group_size is not None:
            raise ValueError("per-channel grouping takes no group size")

    @classmethod
    def per_channel(cls) -> "GroupingScheme":
        return cls(PER_CHANNEL)

    @classmethod
    def per_group(cls, group_size: int) -> "GroupingScheme":
        return cls(PER_GROUP, group_size)

    @property
    def is_per_group(self) -> bool:
        return self.mode == PER_GROUP

    def validate_for(self, dim: int) -> None:
        """Check that this scheme tiles an input dimension of size ``dim``."""
        if self.is_per_group and dim % self.group_size != 0:
            raise ValueError(
                f"group size {self.group_size} does not divide dimension {dim}"
            )

    def resolved_group_size(self, dim: int) -> int:
        return self.group_size if self.is_per_group else dim

    def to_json(self) -> dict:
        if self.is_per_group:
            return {"mode": PER_GROUP, "group_size": self.group_size}
        return {"mode": PER_CHANNEL}

    @classmethod
    def from_json(cls, obj: dict) -> "GroupingScheme":
        if not isinstance(obj, dict) or "mode" not in obj:
            raise ValueError(f"malformed grouping descriptor: {obj!r}")
        if obj["mode"] == PER_GROUP:
            return cls.per_group(obj.get("group_size"))
        if obj["mode"] == PER_CHANNEL:
            if obj.get("group_size") is not None:
                raise ValueError("per-channel descriptor must not carry a group size")
            return cls.per_channel()
        raise ValueError(f"unknown grouping mode {obj['mode']!r}")


def fit_group_size(dim: int, group_size: int) -> int:
    """Largest divisor of ``dim`` that is <= ``group_size``.

    Used as the fallback when a requested group size does not divide a
    layer's input dimension; 1 always qualifies.
    """
    if dim < 1 or group_size < 1:
        raise ValueError("dim and group_size must be positive")
    g = min(group_size, dim)
    while dim % g:
        g -= 1
    return g


@dataclass
class QuantizedTensor:
    """Integer codes plus the scale factors needed to reconstruct them.

    ``axis`` records which dimension the scales run along: "row" for
    weights (scales shaped (N,) per-channel or (N, M/g) per-group) and
    "column" for activations (scales shaped (P,)).
    """

    values: np.ndarray
    scales: np.ndarray
    grouping: GroupingScheme
    bits: int
    axis: str

    def __post_init__(self):
        if self.axis not in (AXIS_ROW, AXIS_COLUMN):
            raise ValueError(f"unknown axis {self.axis!r}")
        if self.values.ndim != 2:
            raise ValueError("quantized values must be 2-D")
        params = QuantParams(self.bits)
        n, m = self.values.shape
        if self.axis == AXIS_ROW:
            if self.grouping.is_per_group:
                self.grouping.validate_for(m)
                expect = (n, m // self.grouping.group_size)
            else:
                expect = (n,)
        else:
            if self.grouping.is_per_group:
                raise ValueError("column-wise tensors are per-channel only")
            expect = (m,)
        if self.scales.shape != expect:
            raise ValueError(
                f"scale shape {self.scales.shape} does not match grouping/axis (expected {expect})"
            )
        if self.scales.size and float(self.scales.min()) <= 0.0:
            raise ValueError("scale factors must be positive")
        if self.values.size and int(np.abs(self.values.astype(np.int64)).max()) > params.qmax:
            raise ValueError(f"quantized values exceed qmax={params.qmax}")

    @property
    def qmax(self) -> int:
        return QuantParams(self.bits).qmax


def _check_finite(x: np.ndarray) -> None:
    if not np.isfinite(x).all():
        raise ValueError("input contains NaN or Inf")


def _round_half_away(x: np.ndarray) -> np.ndarray:
    # Ties away from zero; numpy's round() would round half to even.
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def scale_factor(max_abs: float, params: QuantParams) -> float:
    """Scale mapping [-max_abs, max_abs] onto the integer grid: max_abs / qmax.

    An all-zero group has no range to map; 1.0 is returned so that the
    zero codes dequantize to zero without a division by zero anywhere.
    Computed in float32 to match the stored scale arrays.
    """
    if not np.isfinite(max_abs) or max_abs < 0:
        raise ValueError(f"max_abs must be finite and non-negative, got {max_abs!r}")
    if max_abs == 0:
        return 1.0
    return float(np.float32(max_abs) / np.float32(params.qmax))


def _scales_from_amax(amax: np.ndarray, params: QuantParams) -> np.ndarray:
    scales = amax.astype(np.float32) / np.float32(params.qmax)
    scales[amax == 0] = np.float32(1.0)
    return scales


def _encode(x: np.ndarray, elem_scales: np.ndarray, params: QuantParams) -> np.ndarray:
    # Division in float64; clamp because x/s can land at qmax + ulp.
    q = _round_half_away(x.astype(np.float64) / elem_scales)
    return np.clip(q, -params.qmax, params.qmax).astype(np.int8)


def quantize_group(values: np.ndarray, params: QuantParams) -> tuple[np.ndarray, float]:
    """Quantize one scale group: q_i = round(v_i / s), ties away from zero.

    Returns the int8 codes and the group scale s = max|v| / qmax.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("expected a non-empty 1-D vector")
    _check_finite(v)
    s = scale_factor(float(np.abs(v).max()), params)
    q = _encode(v, np.float64(s), params)
    return q, s


def quantize_weight(
    w: np.ndarray, grouping: GroupingScheme, params: QuantParams
) -> QuantizedTensor:
    """Quantize an N x M weight matrix with row-wise scale sharing.

    Per-channel yields one scale per row; per-group(g) partitions each row
    into M/g contiguous column groups (g must divide M) with one scale
    each.  Per-group with g = M produces the same codes and scale values
    as per-channel.
    """
    w = np.asarray(w)
    if w.ndim != 2 or 0 in w.shape:
        raise ValueError("weight must be a non-empty 2-D matrix")
    _check_finite(w)
    n, m = w.shape
    grouping.validate_for(m)
    g = grouping.resolved_group_size(m)

    amax = np.abs(w).reshape(n, m // g, g).max(axis=2)
    scales = _scales_from_amax(amax, params)
    elem_scales = np.repeat(scales.astype(np.float64), g, axis=1)
    q = _encode(w, elem_scales, params)

    if not grouping.is_per_group:
        scales = scales.reshape(n)
    return QuantizedTensor(q, scales, grouping, params.bits, AXIS_ROW)


def quantize_activation(a: np.ndarray, params: QuantParams) -> QuantizedTensor:
    """Quantize an M x P activation matrix with one scale per column."""
    a = np.asarray(a)
    if a.ndim != 2 or 0 in a.shape:
        raise ValueError("activation must be a non-empty 2-D matrix")
    _check_finite(a)
    amax = np.abs(a).max(axis=0)
    scales = _scales_from_amax(amax, params)
    q = _encode(a, scales.astype(np.float64)[None, :], params)
    return QuantizedTensor(q, scales, GroupingScheme.per_channel(), params.bits, AXIS_COLUMN)


def dequantize(qt: QuantizedTensor) -> np.ndarray:
    """Reconstruct float values as code * scale, in float64."""
    q = qt.values.astype(np.float64)
    s = qt.scales.astype(np.float64)
    if qt.axis == AXIS_ROW:
        if qt.grouping.is_per_group:
            g = qt.values.shape[1] // qt.scales.shape[1]
            return q * np.repeat(s, g, axis=1)
        return q * s[:, None]
    return q * s[None, :]
