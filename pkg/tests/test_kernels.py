"""Integer matmul kernels against the float64 reference.

The integer core is exact, so a quantized product must match the
reference product of the dequantized operands up to float reassociation;
any larger deviation is a kernel bug, not quantization error.
"""

import numpy as np
import pytest

from quantkit import (
    GroupingScheme,
    QuantParams,
    dequantize,
    matmul_per_channel,
    matmul_per_group,
    quantize_activation,
    quantize_weight,
    reference_matmul_fp,
)
from quantkit.kernels import _acc_dtype

from oracles import matmul_descending_k

P8 = QuantParams(8)


def random_operands(rng, n, m, p, wall_columns=()):
    w = rng.normal(0, 1, (n, m)).astype(np.float32)
    for c in wall_columns:
        w[:, c] = rng.uniform(50, 100, n) * rng.choice([-1.0, 1.0], n)
    a = rng.normal(0, 1, (m, p)).astype(np.float32)
    return w, a


def rel_frobenius(x, ref):
    denom = np.linalg.norm(ref)
    return float(np.linalg.norm(x - ref)) / float(denom) if denom else float(np.linalg.norm(x))


class TestReferenceMatmul:
    def test_identity(self):
        a = np.arange(12, dtype=np.float32).reshape(4, 3)
        out = reference_matmul_fp(np.eye(4, dtype=np.float32), a)
        np.testing.assert_array_equal(out, a.astype(np.float64))

    def test_one_by_one_is_scalar_product(self):
        out = reference_matmul_fp(np.array([[3.0]]), np.array([[4.0]]))
        assert out.tolist() == [[12.0]]

    def test_matches_transposed_loop_order(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            w = rng.normal(0, 1, (9, 33))
            a = rng.normal(0, 1, (33, 5))
            ref = reference_matmul_fp(w, a)
            other = matmul_descending_k(w, a)
            assert rel_frobenius(other, ref) <= 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            reference_matmul_fp(np.ones((2, 3)), np.ones((4, 2)))


class TestPerChannelKernel:
    def test_zero_weight_annihilates(self):
        wq = quantize_weight(np.zeros((3, 4), dtype=np.float32), GroupingScheme.per_channel(), P8)
        aq = quantize_activation(np.random.default_rng(1).normal(0, 1, (4, 5)).astype(np.float32), P8)
        assert np.all(matmul_per_channel(wq, aq) == 0.0)

    def test_two_by_two_hand_case(self):
        """Identity codes with known scales: out[i,j] = I[i,j] * s_w[i] * s_a[j]."""
        w = np.array([[0.5, 0.0], [0.0, 0.25]], dtype=np.float32)
        a = np.array([[2.0, 0.0], [0.0, 4.0]], dtype=np.float32)
        wq = quantize_weight(w, GroupingScheme.per_channel(), P8)
        aq = quantize_activation(a, P8)
        out = matmul_per_channel(wq, aq)
        sw = wq.scales.astype(np.float64)
        sa = aq.scales.astype(np.float64)
        expected = np.diag([127 * 127 * sw[0] * sa[0], 127 * 127 * sw[1] * sa[1]])
        np.testing.assert_array_equal(out, expected)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_fp64_reference_on_dequantized_operands(self, seed):
        rng = np.random.default_rng(seed)
        w, a = random_operands(rng, 16, 32, 8)
        wq = quantize_weight(w, GroupingScheme.per_channel(), P8)
        aq = quantize_activation(a, P8)
        ref = reference_matmul_fp(dequantize(wq), dequantize(aq))
        assert rel_frobenius(matmul_per_channel(wq, aq), ref) <= 1e-5

    def test_dimension_mismatch(self):
        wq = quantize_weight(np.ones((2, 3), dtype=np.float32), GroupingScheme.per_channel(), P8)
        aq = quantize_activation(np.ones((4, 2), dtype=np.float32), P8)
        with pytest.raises(ValueError, match="inner dimensions"):
            matmul_per_channel(wq, aq)

    def test_rejects_per_group_weight(self):
        wq = quantize_weight(np.ones((2, 4), dtype=np.float32), GroupingScheme.per_group(2), P8)
        aq = quantize_activation(np.ones((4, 2), dtype=np.float32), P8)
        with pytest.raises(ValueError, match="per-group"):
            matmul_per_channel(wq, aq)

    def test_scale_linearity(self):
        rng = np.random.default_rng(21)
        w, a = random_operands(rng, 4, 8, 3)
        wq = quantize_weight(w, GroupingScheme.per_channel(), P8)
        aq = quantize_activation(a, P8)
        base = matmul_per_channel(wq, aq)
        wq.scales = wq.scales * np.float32(2.0)
        np.testing.assert_array_equal(matmul_per_channel(wq, aq), 2.0 * base)


class TestPerGroupKernel:
    @pytest.mark.parametrize("seed", range(10))
    def test_full_width_group_bit_identical_to_per_channel(self, seed):
        rng = np.random.default_rng(100 + seed)
        w, a = random_operands(rng, 8, 24, 6)
        aq = quantize_activation(a, P8)
        pc = matmul_per_channel(quantize_weight(w, GroupingScheme.per_channel(), P8), aq)
        pg = matmul_per_group(quantize_weight(w, GroupingScheme.per_group(24), P8), aq)
        assert np.array_equal(pc, pg)

    def test_single_group_row_is_scaled_dot_product(self):
        w = np.array([[1.0, 2.0, -3.0, 4.0]], dtype=np.float32)
        a = np.array([[1.0], [1.0], [1.0], [1.0]], dtype=np.float32)
        wq = quantize_weight(w, GroupingScheme.per_group(4), P8)
        aq = quantize_activation(a, P8)
        out = matmul_per_group(wq, aq)
        dot = float(np.sum(wq.values.astype(np.int64) * aq.values[:, 0].astype(np.int64)))
        expected = (dot * float(wq.scales[0, 0])) * float(aq.scales[0])
        assert out[0, 0] == expected

    @pytest.mark.parametrize("seed,g", [(0, 4), (1, 8), (2, 2), (3, 16), (4, 32)])
    def test_matches_fp64_reference(self, seed, g):
        rng = np.random.default_rng(200 + seed)
        w, a = random_operands(rng, 12, 32, 7)
        wq = quantize_weight(w, GroupingScheme.per_group(g), P8)
        aq = quantize_activation(a, P8)
        ref = reference_matmul_fp(dequantize(wq), dequantize(aq))
        assert rel_frobenius(matmul_per_group(wq, aq), ref) <= 1e-5

    def test_wall_weights_per_group_closer_to_unquantized_product(self):
        """Finer weight groups shrink the end-to-end matmul deviation."""
        rng = np.random.default_rng(77)
        w, a = random_operands(rng, 32, 64, 16, wall_columns=(3, 17, 40, 59))
        aq = quantize_activation(a, P8)
        exact = reference_matmul_fp(w, dequantize(aq))
        dev_pc = rel_frobenius(
            matmul_per_channel(quantize_weight(w, GroupingScheme.per_channel(), P8), aq), exact
        )
        dev_pg = rel_frobenius(
            matmul_per_group(quantize_weight(w, GroupingScheme.per_group(8), P8), aq), exact
        )
        assert dev_pg < dev_pc

    def test_rejects_per_channel_weight(self):
        wq = quantize_weight(np.ones((2, 4), dtype=np.float32), GroupingScheme.per_channel(), P8)
        aq = quantize_activation(np.ones((4, 2), dtype=np.float32), P8)
        with pytest.raises(ValueError, match="per-channel"):
            matmul_per_group(wq, aq)


class TestAccumulatorWidth:
    def test_int32_when_depth_allows(self):
        assert _acc_dtype(2**16, 127, 127) == np.dtype(np.int32)

    def test_widens_to_int64_beyond(self):
        # 2^18 * 127^2 overflows a signed 32-bit accumulator
        assert _acc_dtype(2**18, 127, 127) == np.dtype(np.int64)

    def test_extreme_codes_at_width_boundary_stay_exact(self):
        # All codes at +/-qmax with m around the int32 boundary; the result
        # must equal the closed form n_pos - n_neg times qmax^2.
        m = 2**12
        wq = quantize_weight(np.full((1, m), 5.0, dtype=np.float32), GroupingScheme.per_channel(), P8)
        a = np.full((m, 1), 7.0, dtype=np.float32)
        a[: m // 2] *= -1
        aq = quantize_activation(a, P8)
        out = matmul_per_channel(wq, aq)
        expected = 0.0  # half the codes cancel the other half exactly
        assert out[0, 0] == expected
