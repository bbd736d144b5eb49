import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ddar.exceptions import ContractError, DataError, DegenerateInputError
from ddar.metrics import (
    accuracy,
    auroc,
    collapse_score,
    ece,
    evaluate,
    lipschitz_diagnostic,
    pca2,
    report_to_dict,
    uncertainty_grid,
)

# hand-counted fixtures shared with the acceptance module
AUROC_FIXTURES = [
    ([0.1, 0.2], [0.8, 0.9], 1.0),
    ([0.3, 0.3, 0.3], [0.3, 0.3], 0.5),
    ([0.5, 0.1], [0.9, 0.4], 0.75),
    ([0.2, 0.6, 0.4], [0.5, 0.6], 4.5 / 6),
]
ECE_FIXTURES = [
    ([1.0, 1.0, 1.0], [1, 1, 1], 15, 0.0),
    ([0.8], [1], 15, 0.2),
    ([0.6, 0.6], [1, 0], 15, 0.1),
    ([0.2, 0.9, 0.95], [0, 1, 0], 15, (1 / 3) * 0.2 + (1 / 3) * 0.1 + (1 / 3) * 0.95),
    ([0.5, 0.7], [1, 1], 2, 1.0 * abs(1 - 0.6)),
]


def brute_auroc(a, b):
    wins = sum((y > x) + 0.5 * (y == x) for x, y in itertools.product(a, b))
    return wins / (len(a) * len(b))


class TestAccuracy:
    def test_cases(self):
        assert accuracy([1, 0, 1], [1, 0, 1]) == 1.0
        assert accuracy([0, 0], [1, 1]) == 0.0
        assert accuracy([1, 1, 0, 0], [1, 1, 0, 1]) == 0.75

    def test_empty(self):
        with pytest.raises(ContractError):
            accuracy([], [])


class TestEce:
    @pytest.mark.parametrize("conf, correct, bins, expected", ECE_FIXTURES)
    def test_fixtures(self, conf, correct, bins, expected):
        assert ece(conf, correct, bins) == pytest.approx(expected, abs=1e-12)

    def test_right_inclusive_edges(self):
        # 1/3 sits at the right edge of bin 0 of 3 and must not share a bin with 0.5
        assert ece([1 / 3, 0.5], [0, 1], num_bins=3) == pytest.approx(0.5 * (1 / 3) + 0.5 * 0.5, abs=1e-12)

    def test_perfect_calibration_is_zero(self):
        conf = np.repeat([0.25, 0.75], 4)
        correct = np.array([1, 0, 0, 0, 1, 1, 1, 0])
        assert ece(conf, correct) == pytest.approx(0.0, abs=1e-15)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        conf = rng.uniform(size=500)
        correct = rng.uniform(size=500) < conf
        total = 0.0
        for b in range(15):
            lo, hi = b / 15, (b + 1) / 15
            m = [(c > lo or (b == 0 and c == 0)) and c <= hi for c in conf]
            m = np.array(m)
            if m.any():
                total += m.mean() * abs(correct[m].mean() - conf[m].mean())
        assert ece(conf, correct) == pytest.approx(total, abs=1e-12)

    def test_errors(self):
        with pytest.raises(ContractError):
            ece([], [])
        with pytest.raises(ContractError):
            ece([1.2], [1])


class TestAuroc:
    @pytest.mark.parametrize("a, b, expected", AUROC_FIXTURES)
    def test_fixtures(self, a, b, expected):
        assert auroc(a, b) == pytest.approx(expected, abs=1e-12)

    def test_matches_brute_force_and_sklearn(self):
        from sklearn.metrics import roc_auc_score

        rng = np.random.default_rng(1)
        a = np.round(rng.uniform(size=60), 2)
        b = np.round(rng.uniform(0.2, 1.2, size=45), 2)
        expected = brute_auroc(a, b)
        assert auroc(a, b) == pytest.approx(expected, abs=1e-12)
        y = np.r_[np.zeros(len(a)), np.ones(len(b))]
        assert auroc(a, b) == pytest.approx(roc_auc_score(y, np.r_[a, b]), abs=1e-12)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30, unique=True), st.data())
    def test_symmetry(self, values, data):
        k = data.draw(st.integers(1, max(1, len(values) - 1))) if len(values) > 1 else 0
        a, b = values[:k], values[k:]
        if not a or not b:
            return
        assert auroc(a, b) + auroc(b, a) == pytest.approx(1.0, abs=1e-12)

    @given(st.lists(st.integers(-50, 50), min_size=1, max_size=20),
           st.lists(st.integers(-50, 50), min_size=1, max_size=20))
    def test_monotone_transform_invariance(self, a, b):
        # x**3 + 2x is strictly increasing and exact on small integers
        a, b = np.array(a, dtype=float), np.array(b, dtype=float)
        assert auroc(a**3 + 2 * a, b**3 + 2 * b) == auroc(a, b)

    def test_empty_side(self):
        with pytest.raises(ContractError):
            auroc([], [0.1])


class TestEvaluate:
    def test_report(self):
        r = evaluate([0, 1, 1], [0.9, 0.8, 0.6], [0.1, 0.2, 0.4], [0, 1, 0], uncertainty_ood=[0.5, 0.05])
        assert r.accuracy == pytest.approx(2 / 3)
        assert r.auroc == pytest.approx(brute_auroc([0.1, 0.2, 0.4], [0.5, 0.05]))
        assert (r.n_id, r.n_ood) == (3, 2)
        assert r.per_point[2] == (0.6, 0.4, 0, 1)

    def test_no_ood_omits_auroc(self):
        r = evaluate([0], [1.0], [0.0], [0])
        assert r.auroc is None and "auroc" not in report_to_dict(r) and "auroc" not in r.summary()


def _fake_predict(X):
    conf = 1.0 / (1.0 + X[:, 0] ** 2 + X[:, 1] ** 2)
    return (X[:, 0] > 0).astype(int), conf, 1.0 - conf


class TestUncertaintyGrid:
    def test_corners(self):
        g = uncertainty_grid(_fake_predict, (-1.0, 2.0, -3.0, 4.0), resolution=2)
        np.testing.assert_array_equal(g.points(), [[-1, -3], [2, -3], [-1, 4], [2, 4]])
        assert g.confidence.shape == (4,)

    def test_matches_pointwise(self):
        g = uncertainty_grid(_fake_predict, resolution=7)
        _, conf, unc = _fake_predict(g.points())
        np.testing.assert_array_equal(g.confidence, conf)
        np.testing.assert_array_equal(g.uncertainty, unc)
        assert len(g.points()) == 49

    def test_default_bounds_cover_moons(self):
        from ddar.data import gen_two_moons

        X = gen_two_moons(500, 0.1, 0).X
        g = uncertainty_grid(_fake_predict, resolution=2)
        xmin, xmax, ymin, ymax = g.bounds
        assert xmin < X[:, 0].min() and X[:, 0].max() < xmax
        assert ymin < X[:, 1].min() and X[:, 1].max() < ymax

    def test_errors(self):
        with pytest.raises(DataError):
            uncertainty_grid(_fake_predict, input_dim=3)
        with pytest.raises(ContractError):
            uncertainty_grid(_fake_predict, resolution=1)


class TestLipschitz:
    X1 = np.random.default_rng(0).normal(size=(50, 3))
    X2 = np.random.default_rng(1).normal(size=(50, 3))

    def test_identity(self):
        d = lipschitz_diagnostic(lambda x: x, self.X1, self.X2)
        np.testing.assert_allclose(d["ratios"], 1.0, rtol=1e-14)

    def test_doubling(self):
        d = lipschitz_diagnostic(lambda x: 2 * x, self.X1, self.X2)
        assert d["min_ratio"] == pytest.approx(2.0) and d["max_ratio"] == pytest.approx(2.0)

    def test_constant_map(self):
        d = lipschitz_diagnostic(lambda x: np.zeros_like(x), self.X1, self.X2)
        assert d["max_ratio"] == 0.0
        assert len(d["histogram"][0]) == 20

    def test_coincident_pairs_skipped(self):
        X2 = self.X2.copy()
        X2[:3] = self.X1[:3]
        d = lipschitz_diagnostic(lambda x: x, self.X1, X2)
        assert d["skipped"] == 3 and len(d["ratios"]) == 47


class TestPca2:
    def test_axis_aligned(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(20_000, 2)) * [2.0, 1.0]
        _, vals, comps = pca2(X)
        cov = np.cov(X.T)
        np.testing.assert_allclose(vals, np.linalg.eigvalsh(cov)[::-1], rtol=1e-8)
        assert vals[0] == pytest.approx(4.0, rel=0.05)
        assert abs(comps[0, 0]) == pytest.approx(1.0, abs=0.01)

    def test_matches_eigh(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(300, 6)) @ np.diag([5, 3, 1, 0.5, 0.2, 0.1]) @ np.linalg.qr(rng.normal(size=(6, 6)))[0]
        proj, vals, comps = pca2(X)
        w, V = np.linalg.eigh(np.cov(X.T))
        np.testing.assert_allclose(vals, w[::-1][:2], rtol=1e-8)
        for j in range(2):
            assert abs(comps[j] @ V[:, -1 - j]) == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_allclose(proj, (X - X.mean(0)) @ comps.T)

    def test_2d_projection_is_rotation(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(40, 2)) @ [[3.0, 1.0], [0.0, 1.0]]
        X -= X.mean(0)
        proj, vals, _ = pca2(X)
        D0 = np.linalg.norm(X[:, None] - X[None], axis=2)
        D1 = np.linalg.norm(proj[:, None] - proj[None], axis=2)
        np.testing.assert_allclose(D1, D0, atol=1e-8)
        assert vals.sum() == pytest.approx(np.trace(np.cov(X.T)), rel=1e-10)

    def test_duplicates_project_identically(self):
        X = np.random.default_rng(4).normal(size=(10, 4))
        proj, _, _ = pca2(np.vstack([X, X]))
        np.testing.assert_array_equal(proj[:10], proj[10:])

    def test_deterministic(self):
        X = np.random.default_rng(5).normal(size=(30, 5))
        np.testing.assert_array_equal(pca2(X)[0], pca2(X)[0])

    @given(arrays(np.float64, (8, 4), elements=st.floats(-10, 10)))
    def test_variance_bound(self, X):
        if np.ptp(X, axis=0).max() < 1e-3:
            return
        _, vals, _ = pca2(X)
        assert vals.sum() <= np.trace(np.cov(X.T)) * (1 + 1e-9) + 1e-12

    def test_rank_one(self):
        X = np.outer(np.arange(6.0), [1.0, 2.0, 0.0, -1.0])
        _, vals, comps = pca2(X)
        assert vals[1] == pytest.approx(0.0, abs=1e-12)
        assert abs(comps[0] @ comps[1]) < 1e-12

    def test_errors(self):
        with pytest.raises(ContractError):
            pca2(np.ones((2, 3)))
        with pytest.raises(DegenerateInputError):
            pca2(np.ones((5, 3)))


class TestCollapseScore:
    def test_identical_is_zero(self):
        A = np.random.default_rng(0).normal(size=(20, 3))
        assert collapse_score(A, A) == 0.0

    def test_far_translation_is_large(self):
        A = np.random.default_rng(1).normal(scale=0.1, size=(50, 3))
        assert collapse_score(A, A + 100.0) > 100

    def test_hand_geometry(self):
        assert collapse_score([[0.0, 0.0], [1.0, 0.0]], [[0.0, 3.0]]) == pytest.approx(3.0, abs=1e-15)

    def test_rigid_motion_invariance(self):
        rng = np.random.default_rng(2)
        A, B = rng.normal(size=(40, 3)), rng.normal(loc=2.0, size=(25, 3))
        Q = np.linalg.qr(rng.normal(size=(3, 3)))[0]
        t = rng.normal(size=3)
        assert collapse_score(A @ Q + t, B @ Q + t) == pytest.approx(collapse_score(A, B), rel=1e-10)

    def test_pair_subsample_seeded(self):
        rng = np.random.default_rng(3)
        A, B = rng.normal(size=(200, 2)), rng.normal(size=(10, 2))
        assert collapse_score(A, B, max_pairs=500, seed=1) == collapse_score(A, B, max_pairs=500, seed=1)

    def test_empty(self):
        with pytest.raises(ContractError):
            collapse_score(np.zeros((0, 2)), np.zeros((1, 2)))
