import math

import numpy as np
import pytest
from scipy import stats

from mfmc_lab import synthetic as sy
from mfmc_lab.analytic import DomainError
from mfmc_lab.gram_entropy import dtc_alpha, matrix_mutual_information


def test_streams_are_independent_and_reproducible():
    a = sy.make_rng(3, 0).standard_normal(5)
    b = sy.make_rng(3, 1).standard_normal(5)
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, sy.make_rng(3, 0).standard_normal(5))


class TestEquicorrelated:
    def test_independent_case_unit_variance(self):
        s = sy.sample_equicorrelated(4, 0.0, 5000, 0)
        np.testing.assert_allclose(s.values.var(axis=0), 1.0, atol=0.1)

    def test_sample_correlation(self):
        c = np.corrcoef(sy.sample_equicorrelated(3, 0.5, 20_000, 1).values.T)
        off = c[~np.eye(3, dtype=bool)]
        assert np.all(np.abs(off - 0.5) <= 0.03)

    def test_covariance_frobenius(self):
        s = sy.sample_equicorrelated(3, 0.5, 20_000, 2)
        target = np.full((3, 3), 0.5) + 0.5 * np.eye(3)
        assert np.linalg.norm(np.cov(s.values.T) - target) <= 0.05

    def test_reproducible(self):
        a = sy.sample_equicorrelated(3, 0.3, 100, 9)
        np.testing.assert_array_equal(a.values, sy.sample_equicorrelated(3, 0.3, 100, 9).values)
        assert a.seed == 9 and a.family

    def test_non_pd(self):
        with pytest.raises(DomainError):
            sy.sample_equicorrelated(3, -0.5, 10, 0)


class TestDataA:
    def test_degenerate_hook(self):
        s = sy.sample_data_a(3, 4, 0, _fixed_uniform=0.5)
        np.testing.assert_allclose(s.values[:, 0], 0.25)

    def test_range_and_relation(self):
        v = sy.sample_data_a(5, 1000, 1).values
        assert v.min() >= 0 and v.max() <= 1
        np.testing.assert_allclose(v[:, 0], v[:, 1:].mean(axis=1) ** 2)

    def test_marginal_matches_resampled_reference(self):
        m = 6
        x1 = sy.sample_data_a(m, 10_000, 2).values[:, 0]
        ref = np.random.default_rng(12345).uniform(size=(10_000, m - 1)).mean(axis=1) ** 2
        assert stats.ks_2samp(x1, ref).statistic <= 0.03

    def test_rejects_small_m(self):
        with pytest.raises(ValueError):
            sy.sample_data_a(2, 10, 0)

    def test_estimated_dependence_decreases_with_m(self):
        wins = 0
        for r in range(20):
            v3 = sy.sample_data_a(3, 500, r).variables()
            v8 = sy.sample_data_a(8, 500, r).variables()
            wins += matrix_mutual_information(v8[1:], v8[0]) < matrix_mutual_information(v3[1:], v3[0])
        assert wins > 10


class TestDataB:
    def test_relation(self):
        v = sy.sample_data_b(4, 200, 0).values
        np.testing.assert_allclose(v[:, 1], v[:, 0] ** 2 + v[:, 0])

    def test_copies_identical(self):
        v = sy.sample_data_b(6, 50, 1).values
        for j in range(2, 6):
            np.testing.assert_array_equal(v[:, j], v[:, 1])

    def test_estimated_dtc_roughly_flat_in_m(self):
        vals = [dtc_alpha(sy.sample_data_b(m, 500, 0).variables()) for m in range(3, 9)]
        assert (max(vals) - min(vals)) <= 0.3 * np.mean(vals)


class TestGaussianPairs:
    def test_independent(self):
        x, y = sy.sample_gaussian_pairs(3, 0.0, 5000, 0)
        cross = np.corrcoef(x.values.T, y.values.T)[:3, 3:]
        assert np.abs(cross).max() <= 0.05

    def test_structure(self):
        x, y = sy.sample_gaussian_pairs(4, 0.7, 20_000, 1)
        cross = np.corrcoef(x.values.T, y.values.T)[:4, 4:]
        np.testing.assert_allclose(np.diag(cross), 0.7, atol=0.02)
        assert np.abs(cross[~np.eye(4, dtype=bool)]).max() <= 0.03
        assert x.columns[0] == "x1" and y.columns[0] == "y1"

    def test_true_mi_value(self):
        from mfmc_lab.analytic import gaussian_mi_multidim

        assert gaussian_mi_multidim(20, 0.5) == pytest.approx(2.8768207, abs=1e-7)

    def test_reproducible_and_domain(self):
        a, _ = sy.sample_gaussian_pairs(2, 0.5, 10, 4)
        np.testing.assert_array_equal(a.values, sy.sample_gaussian_pairs(2, 0.5, 10, 4)[0].values)
        with pytest.raises(DomainError):
            sy.sample_gaussian_pairs(2, 1.0, 10, 0)


class TestLatentClass:
    def test_class_balance(self):
        d = sy.sample_latent_class_trimodal(4, 4000, 0.5, 0)
        counts = np.bincount(d.labels, minlength=4)
        assert np.all(np.abs(counts - 1000) <= 100)

    def test_shapes_and_shared_anchors(self):
        a = sy.sample_latent_class_trimodal(3, 200, 1e-9, 0)
        b = sy.sample_latent_class_trimodal(3, 100, 1e-9, 5, anchor_seed=0)
        assert [m.shape for m in a.modalities] == [(200, 16), (200, 8), (200, 4)]
        for j in range(3):
            for c in range(3):
                np.testing.assert_allclose(a.modalities[j][a.labels == c][0], b.modalities[j][b.labels == c][0],
                                           atol=1e-8)

    def test_small_noise_is_separable(self):
        from mfmc_lab.training import linear_probe

        d = sy.sample_latent_class_trimodal(4, 400, 1e-3, 1)
        assert linear_probe(d.modalities[2], d.labels).test_accuracy == 1.0

    def test_huge_noise_is_chance(self):
        from mfmc_lab.training import linear_probe

        d = sy.sample_latent_class_trimodal(4, 4000, 1e3, 2)
        assert linear_probe(d.modalities[0], d.labels).test_accuracy == pytest.approx(0.25, abs=0.05)

    def test_errors(self):
        with pytest.raises(ValueError):
            sy.sample_latent_class_trimodal(1, 10, 0.5, 0)
        with pytest.raises(ValueError):
            sy.sample_latent_class_trimodal(3, 10, 0.0, 0)
        with pytest.raises(ValueError):
            sy.TriModalLabeled((np.ones((3, 1)),) * 3, np.zeros(4, dtype=int), 2, 0)


def test_csv_dump(tmp_path):
    s = sy.sample_equicorrelated(3, 0.2, 4, 0)
    path = tmp_path / "s.csv"
    s.to_csv(path)
    raw = path.read_bytes()
    assert b"\r\n" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "x1,x2,x3" and len(lines) == 5
    back = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    np.testing.assert_array_equal(back, s.values)
    assert math.isfinite(back.sum())
