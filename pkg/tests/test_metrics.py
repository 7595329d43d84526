import numpy as np
import pytest

from hybridseg.checks import brute_force_distances, brute_force_surface
from hybridseg.metrics import (
    CaseMetrics,
    ClassMetrics,
    MetricsReport,
    asd,
    dice,
    evaluate_case,
    extract_surface,
    format_mean_std,
    hd95,
    percentile_95,
)
from hybridseg.volume import LabelVolume


def labels(mask, spacing=(1.0, 1.0, 1.0)):
    return LabelVolume(np.asarray(mask, dtype=np.int64), spacing)


class TestDice:
    def test_identical_masks(self):
        m = np.random.default_rng(0).integers(0, 2, (5, 5, 5))
        assert dice(labels(m), labels(m), 1) == 1.0

    def test_disjoint_masks(self):
        a = np.zeros((4, 4, 4), dtype=int)
        b = np.zeros((4, 4, 4), dtype=int)
        a[0, 0, 0] = 1
        b[3, 3, 3] = 1
        assert dice(labels(a), labels(b), 1) == 0.0

    def test_shifted_block_hand_count(self):
        a = np.zeros((4, 4, 4), dtype=int)
        b = np.zeros((4, 4, 4), dtype=int)
        a[0, 0:2, 0:2] = 1          # 2x2x1 block, |A| = 4
        b[0, 1:3, 0:2] = 1          # same block shifted by 1 along h
        assert dice(labels(a), labels(b), 1) == 0.5

    def test_empty_conventions(self):
        empty = np.zeros((3, 3, 3), dtype=int)
        one = empty.copy()
        one[1, 1, 1] = 1
        assert dice(labels(empty), labels(empty), 1) == 1.0
        assert dice(labels(empty), labels(one), 1) == 0.0

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a = rng.integers(0, 2, (6, 6, 6))
        b = rng.integers(0, 2, (6, 6, 6))
        assert dice(labels(a), labels(b), 1) == dice(labels(b), labels(a), 1)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            dice(labels(np.zeros((3, 3, 3), dtype=int)),
                 labels(np.zeros((4, 4, 4), dtype=int)), 1)


class TestSurface:
    def test_single_voxel(self):
        mask = np.zeros((3, 3, 3), dtype=bool)
        mask[1, 1, 1] = True
        surf = extract_surface(mask, (1.0, 1.0, 1.0))
        assert surf.tolist() == [[1.0, 1.0, 1.0]]

    def test_solid_cube_has_26_boundary_voxels(self):
        mask = np.zeros((5, 5, 5), dtype=bool)
        mask[1:4, 1:4, 1:4] = True
        surf = extract_surface(mask, (1.0, 1.0, 1.0))
        assert len(surf) == 26
        assert [2.0, 2.0, 2.0] not in surf.tolist()

    def test_empty_mask(self):
        assert len(extract_surface(np.zeros((3, 3, 3), dtype=bool), (1, 1, 1))) == 0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        mask = rng.random((6, 6, 6)) < 0.4
        fast = extract_surface(mask, (1.0, 0.5, 2.0))
        slow = np.array(brute_force_surface(mask, (1.0, 0.5, 2.0)))
        assert np.array_equal(fast, slow)


class TestAsd:
    def test_identical_masks_zero(self):
        m = np.zeros((4, 4, 4), dtype=int)
        m[1:3, 1:3, 1:3] = 1
        assert asd(labels(m), labels(m), 1) == 0.0

    def test_single_pair_distance(self):
        a = np.zeros((6, 1, 1), dtype=int)
        b = np.zeros((6, 1, 1), dtype=int)
        a[1, 0, 0] = 1
        b[4, 0, 0] = 1
        assert asd(labels(a), labels(b), 1) == 3.0

    def test_anisotropic_spacing(self):
        a = np.zeros((3, 3, 3), dtype=int)
        b = np.zeros((3, 3, 3), dtype=int)
        a[1, 1, 1] = 1
        b[1, 1, 2] = 1  # adjacent along w, spacing 2mm there
        sp = (1.0, 1.0, 2.0)
        assert asd(labels(a, sp), labels(b, sp), 1) == 2.0

    def test_empty_undefined(self):
        empty = np.zeros((3, 3, 3), dtype=int)
        one = empty.copy()
        one[0, 0, 0] = 1
        assert asd(labels(empty), labels(one), 1) is None


class TestHd95:
    def test_identical_masks_zero(self):
        m = np.zeros((4, 4, 4), dtype=int)
        m[1:3, 1:3, 1:3] = 1
        assert hd95(labels(m), labels(m), 1) == 0.0

    def test_percentile_interpolation_on_20_values(self):
        pool = np.array([0.0] * 19 + [10.0])
        assert abs(percentile_95(pool) - 0.5) < 1e-12

    def test_bounded_by_max(self):
        from hybridseg.metrics import _pooled_surface_distances
        rng = np.random.default_rng(3)
        checked = 0
        while checked < 10:
            a = rng.random((5, 5, 5)) < 0.3
            b = rng.random((5, 5, 5)) < 0.3
            if not (a.any() and b.any()):
                continue
            checked += 1
            pool = _pooled_surface_distances(a, b, (1.0, 1.0, 1.0))
            h = hd95(labels(a.astype(int)), labels(b.astype(int)), 1)
            assert h <= float(pool.max())

    def test_matches_brute_force(self):
        rng = np.random.default_rng(4)
        checked = 0
        while checked < 50:
            shape = tuple(int(rng.integers(4, 12)) for _ in range(3))
            spacing = tuple(float(s) for s in rng.uniform(0.5, 2.0, size=3))
            a = rng.random(shape) < 0.3
            b = rng.random(shape) < 0.3
            if not (a.any() and b.any()):
                continue
            checked += 1
            oracle = brute_force_distances(a, b, spacing)
            pa, pb = labels(a.astype(int), spacing), labels(b.astype(int), spacing)
            assert asd(pa, pb, 1) == oracle[0]
            assert hd95(pa, pb, 1) == oracle[1]


class TestInvariances:
    def test_translation_invariance(self):
        rng = np.random.default_rng(5)
        a = np.zeros((10, 10, 10), dtype=int)
        b = np.zeros((10, 10, 10), dtype=int)
        a[2:5, 2:5, 2:5] = 1
        b[3:6, 2:5, 2:5] = 1
        shift = (2, 1, 3)
        a2 = np.roll(a, shift, axis=(0, 1, 2))
        b2 = np.roll(b, shift, axis=(0, 1, 2))
        assert dice(labels(a), labels(b), 1) == dice(labels(a2), labels(b2), 1)
        assert asd(labels(a), labels(b), 1) == asd(labels(a2), labels(b2), 1)
        assert hd95(labels(a), labels(b), 1) == hd95(labels(a2), labels(b2), 1)

    def test_spacing_scaling_law(self):
        rng = np.random.default_rng(6)
        a = rng.random((8, 8, 8)) < 0.3
        b = rng.random((8, 8, 8)) < 0.3
        base = (1.0, 1.3, 0.7)
        c = 2.5
        scaled = tuple(c * s for s in base)
        pa, ga = labels(a.astype(int), base), labels(b.astype(int), base)
        pc, gc = labels(a.astype(int), scaled), labels(b.astype(int), scaled)
        assert np.isclose(asd(pc, gc, 1), c * asd(pa, ga, 1), rtol=1e-12)
        assert np.isclose(hd95(pc, gc, 1), c * hd95(pa, ga, 1), rtol=1e-12)
        assert dice(pa, ga, 1) == dice(pc, gc, 1)


class TestAggregation:
    def make_report(self, dices):
        cases = [CaseMetrics(case_id=f"c{i}",
                             per_class={1: ClassMetrics(d, 0.1, 0.2)})
                 for i, d in enumerate(dices)]
        return MetricsReport(cases=cases, num_classes=2)

    def test_single_case_zero_std(self):
        report = self.make_report([0.9])
        mean, std = report.aggregate(1, "dice")
        assert (mean, std) == (0.9, 0.0)

    def test_two_case_mean(self):
        report = self.make_report([0.8, 0.9])
        mean, _ = report.aggregate(1, "dice")
        assert abs(mean - 0.85) < 1e-12

    def test_render_mean_std_format(self):
        assert format_mean_std(0.886, 0.076) == "0.886 (0.076)"
        report = self.make_report([0.886, 0.886])
        assert "0.886 (0.000)" in report.render()

    def test_empty_errors(self):
        with pytest.raises(ValueError, match="empty"):
            MetricsReport(cases=[], num_classes=2)

    def test_excluded_counted(self):
        cases = [
            CaseMetrics("a", {1: ClassMetrics(1.0, None, None)}),
            CaseMetrics("b", {1: ClassMetrics(0.5, 2.0, 3.0)}),
        ]
        report = MetricsReport(cases=cases, num_classes=2)
        assert report.excluded(1, "asd_mm") == 1
        assert report.aggregate(1, "asd_mm") == (2.0, 0.0)
        assert "[1 excluded]" in report.render()

    def test_rows_column_order(self):
        report = self.make_report([0.7])
        rows = report.to_rows()
        assert rows == [("c0", 1, 0.7, 0.1, 0.2)]


class TestEvaluateCase:
    def test_self_comparison_perfect(self):
        rng = np.random.default_rng(7)
        m = (rng.random((6, 6, 6)) < 0.4).astype(int)
        m[0, 0, 0] = 1
        case = evaluate_case("x", labels(m), labels(m), 2)
        assert case.per_class[1].dice == 1.0
        assert case.per_class[1].asd_mm == 0.0
        assert case.per_class[1].hd95_mm == 0.0
