import numpy as np
import pytest

from lrt.boundary import (
    boundaries_from_labels,
    laplacian_adjoint,
    laplacian_edge,
    laplacian_response,
)
from lrt.core import LabelImage
from lrt.errors import NotNormalizedError, ShapeError


def one_hot(labels, c):
    out = np.zeros(labels.shape + (c,))
    rr, cc = np.meshgrid(*map(np.arange, labels.shape), indexing="ij")
    out[rr, cc, labels] = 1.0
    return out


class TestLabelBoundaries:
    def test_uniform_is_zero(self):
        labels = LabelImage(labels=np.full((6, 12), 2, dtype=np.int32), num_classes=3)
        out = boundaries_from_labels(labels, np.ones((6, 12), dtype=bool))
        assert (out.values == 0).all()

    def test_column_split_marks_both_seams(self):
        # classes 1|2 split at column k; azimuthal wrap adds a second seam
        h, w, k = 6, 16, 5
        lab = np.where(np.arange(w) < k, 1, 2)[None, :].repeat(h, axis=0)
        labels = LabelImage(labels=lab.astype(np.int32), num_classes=3)
        out = boundaries_from_labels(labels, np.ones((h, w), dtype=bool))
        expected_cols = {k - 1, k, 0, w - 1}
        got_cols = set(np.nonzero(out.values.any(axis=0))[0].tolist())
        assert got_cols == expected_cols
        assert (out.values[:, sorted(expected_cols)] == 1).all()

    def test_row_split_marks_adjacent_rows_only(self):
        h, w, k = 10, 8, 4
        lab = np.where(np.arange(h) < k, 1, 2)[:, None].repeat(w, axis=1)
        labels = LabelImage(labels=lab.astype(np.int32), num_classes=3)
        out = boundaries_from_labels(labels, np.ones((h, w), dtype=bool))
        got_rows = set(np.nonzero(out.values.any(axis=1))[0].tolist())
        assert got_rows == {k - 1, k}

    def test_checkerboard_all_marked(self):
        h, w = 8, 10
        lab = (1 + (np.add.outer(np.arange(h), np.arange(w)) % 2)).astype(np.int32)
        out = boundaries_from_labels(LabelImage(labels=lab, num_classes=3),
                                     np.ones((h, w), dtype=bool))
        assert (out.values == 1).all()

    def test_relabeling_permutation_invariant(self):
        rng = np.random.default_rng(41)
        lab = rng.integers(0, 5, (8, 12)).astype(np.int32)
        valid = rng.random((8, 12)) < 0.8
        a = boundaries_from_labels(LabelImage(labels=lab, num_classes=5), valid)
        perm = np.array([0, 3, 4, 1, 2])  # keeps ignore fixed
        b = boundaries_from_labels(
            LabelImage(labels=perm[lab].astype(np.int32), num_classes=5), valid)
        assert np.array_equal(a.values, b.values)

    def test_ignore_class_produces_no_boundary(self):
        lab = np.array([[1, 0, 2]], dtype=np.int32)
        out = boundaries_from_labels(LabelImage(labels=lab, num_classes=3),
                                     np.ones((1, 3), dtype=bool))
        # wrap makes 1 and 2 adjacent; the 0 pixel itself stays 0
        assert out.values.tolist() == [[1.0, 0.0, 1.0]]

    def test_invalid_pixels_stay_zero(self):
        lab = np.array([[1, 2, 1, 2]], dtype=np.int32)
        valid = np.array([[True, False, True, True]])
        out = boundaries_from_labels(LabelImage(labels=lab, num_classes=3), valid)
        assert out.values[0, 1] == 0.0

    def test_shape_error(self):
        labels = LabelImage(labels=np.zeros((2, 2), dtype=np.int32), num_classes=2)
        with pytest.raises(ShapeError):
            boundaries_from_labels(labels, np.ones((3, 3), dtype=bool))


class TestLaplacianEdge:
    def test_constant_scores_are_zero(self):
        probs = np.full((5, 8, 4), 0.25)
        assert (laplacian_edge(probs).values == 0).all()

    def test_hard_split_support_is_tight(self):
        h, w, k = 6, 16, 7
        lab = np.where(np.arange(w) < k, 1, 2)[None, :].repeat(h, axis=0)
        out = laplacian_edge(one_hot(lab, 3))
        cols = set(np.nonzero(out.values.any(axis=0))[0].tolist())
        assert cols == {k - 1, k, 0, w - 1}  # stencil support is one pixel

    def test_output_clamped(self):
        rng = np.random.default_rng(42)
        u = rng.uniform(0, 1, (6, 9, 5))
        probs = u / u.sum(axis=2, keepdims=True)
        vals = laplacian_edge(probs).values
        assert vals.min() >= 0.0 and vals.max() <= 1.0

    def test_not_normalized_error(self):
        with pytest.raises(NotNormalizedError):
            laplacian_edge(np.full((3, 3, 2), 0.7))

    def test_support_matches_label_boundaries(self):
        # With every pixel valid and no ignore class, the one-hot Laplacian
        # responds exactly where a 4-neighbor label differs, which is the
        # same support as the hard boundary map.
        rng = np.random.default_rng(43)
        for _ in range(10):
            lab = rng.integers(1, 4, (7, 11)).astype(np.int32)
            hard = boundaries_from_labels(LabelImage(labels=lab, num_classes=4),
                                          np.ones(lab.shape, dtype=bool))
            soft = laplacian_edge(one_hot(lab, 4))
            assert np.array_equal(soft.values > 0, hard.values > 0)

    def test_adjoint_matches_fd(self):
        rng = np.random.default_rng(44)
        u = rng.uniform(0.1, 1.0, (4, 5, 3))
        probs = u / u.sum(axis=2, keepdims=True)
        weight = rng.normal(0, 1, (4, 5, 3))

        def functional(p):
            _, lap = laplacian_response(p)
            return float(np.sum(lap * weight))

        grad = laplacian_adjoint(weight)
        step = 1e-6
        for flat in rng.permutation(probs.size)[:25]:
            probe = probs.copy()
            probe.flat[flat] += step
            f1 = functional(probe)
            probe.flat[flat] -= 2 * step
            f0 = functional(probe)
            fd = (f1 - f0) / (2 * step)
            assert fd == pytest.approx(grad.flat[flat], rel=1e-5, abs=1e-8)
