import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpsim.core import ParameterError, RngStream
from dpsim.kde import DatasetTooSmall, min_dataset_size, query_kde
from dpsim.oracle import exact_kdes
from dpsim.smooth import (CHECK_POINTS, SMOOTH_KERNELS, ExpSumApprox, build_smooth_kde,
                          check_grid, exp_sum_approx, query_smooth_kde,
                          smooth_alpha, sup_error)

# Frozen after the first build: term counts were 6, 9 and 12 and the largest
# per-term amplification w_j exp(-t_j) was about 0.37.
TERM_CONSTANT = 25.0
AMPLIFICATION_BOUND = 1.0

ALPHAS = (0.1, 0.01, 0.001)


class TestExpSum:
    @pytest.mark.parametrize("alpha", ALPHAS)
    def test_sup_certificate(self, alpha):
        g = exp_sum_approx(alpha)
        x = np.geomspace(1.0, 1e6, CHECK_POINTS)
        assert np.abs(g(x) - 1.0 / x).max() <= alpha
        assert sup_error(g)[0] <= alpha

    @pytest.mark.parametrize("alpha", ALPHAS)
    def test_at_one_and_at_inverse_alpha(self, alpha):
        g = exp_sum_approx(alpha)
        assert abs(g(1.0) - 1.0) <= alpha
        assert abs(g(1.0 / alpha) - alpha) <= alpha

    @pytest.mark.parametrize("alpha", ALPHAS)
    def test_term_count_and_weights(self, alpha):
        g = exp_sum_approx(alpha)
        assert g.n_terms <= TERM_CONSTANT * math.log(1 / alpha)
        assert np.all(g.weights > 0) and np.all(g.nodes > 0)
        assert g.amplification.max() <= AMPLIFICATION_BOUND
        # nodes and weights stay below ln(4/alpha), well inside 1/(alpha ln(1/alpha))
        assert max(g.nodes.max(), g.weights.max()) <= 1 / (alpha * math.log(1 / alpha))

    def test_frozen_term_counts(self):
        assert [exp_sum_approx(a).n_terms for a in ALPHAS] == [6, 9, 12]

    @pytest.mark.parametrize("alpha", ALPHAS)
    def test_strictly_decreasing(self, alpha):
        g = exp_sum_approx(alpha)
        x = np.geomspace(1.0, 1.0 / alpha, 2000)
        assert np.all(np.diff(g(x)) < 0)

    def test_grid_span(self):
        assert check_grid(0.1)[-1] == 1e6
        assert check_grid(1e-3)[-1] == pytest.approx(1e7)

    def test_rejects_alpha(self):
        for a in (0.0, 1.5):
            with pytest.raises(ParameterError):
                exp_sum_approx(a)

    def test_manual_trapezoid(self):
        # independent evaluation of the quadrature at the returned step
        a = 0.1
        g = exp_sum_approx(a)
        s = np.log(g.nodes)
        assert np.allclose(np.diff(s), g.step)
        assert s[0] == pytest.approx(math.log(a / 4))
        x = 3.0
        f = np.exp(s - x * np.exp(s))
        want = g.step * (f.sum() - (f[0] + f[-1]) / 2)
        assert g(x) == pytest.approx(want, rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-3, 0.9))
    def test_any_alpha_certifies(self, alpha):
        g = exp_sum_approx(alpha)
        assert sup_error(g)[0] <= alpha

    def test_scalar_and_vector_calls(self):
        g = ExpSumApprox(np.array([1.0, 2.0]), np.array([0.5, 1.0]), 0.1, 1.0)
        assert g(0.0) == 3.0
        assert g(np.array([0.0, 1.0])).tolist() == pytest.approx([3.0, math.exp(-0.5) + 2 / math.e])


@pytest.fixture(scope="module")
def blob():
    g = np.random.default_rng(1)
    x = g.normal(0, 0.15, (3000, 6))
    q = x[g.choice(3000, 30)] + g.normal(0, 0.05, (30, 6))
    return x, q


class TestBuild:
    def test_gate_uses_reduced_alpha(self):
        a = smooth_alpha(0.1)
        assert a == pytest.approx(0.1 / math.log(10))
        need = min_dataset_size(a, 1.0)
        with pytest.raises(DatasetTooSmall):
            build_smooth_kde(np.zeros((need - 1, 2)), "inv1p-l2", 1.0, 0.1, rng=0)
        build_smooth_kde(np.zeros((need, 2)), "inv1p-l2", 1.0, 0.1, rng=0)

    def test_unknown_kernel(self):
        with pytest.raises(ParameterError):
            build_smooth_kde(np.zeros((5, 2)), "gaussian", 1.0, 0.1, check_size=False)

    @pytest.mark.parametrize("kernel", sorted(SMOOTH_KERNELS))
    def test_budget_and_sub_sketches(self, kernel, blob):
        x, _ = blob
        s = build_smooth_kde(x, kernel, 1.5, 0.3, rng=1)
        assert len(s.sub_sketches) == s.approx.n_terms
        eps = [sub.epsilon for sub in s.sub_sketches]
        assert all(e == eps[0] for e in eps)
        assert math.fsum(eps) == pytest.approx(1.5, rel=1e-15)
        assert {sub.kernel for sub in s.sub_sketches} == {SMOOTH_KERNELS[kernel]}

    def test_l1_path_never_projects(self):
        x = np.random.default_rng(2).random((2000, 300)) * 0.01
        s = build_smooth_kde(x, "inv1p-l1", 1.0, 0.3, rng=0, check_size=False)
        assert s.projection is None
        assert all(sub.projection is None for sub in s.sub_sketches)
        assert s.sub_sketches[0].internal_dim == 300

    def test_l2_paths_project_when_smaller(self):
        x = np.random.default_rng(2).random((2000, 300)) * 0.01
        for kernel in ("inv1p-l2", "inv1p-l2sq"):
            s = build_smooth_kde(x, kernel, 1.0, 0.3, rng=0, check_size=False)
            assert s.projection.out_dim == math.ceil(8 / 0.09) and s.input_dim == 300

    def test_sub_sketch_scaling(self, blob):
        x, _ = blob
        s = build_smooth_kde(x, "inv1p-l2sq", 1.0, 0.3, rng=3, noise_off=True,
                             use_projection=False)
        assert np.allclose(s.sub_scales, np.sqrt(s.approx.nodes))
        sub = s.sub_sketches[2]
        t = s.approx.nodes[2]
        y = x[0]
        # sub-sketch j answers the Gaussian KDE of the scaled data at the scaled query
        want = exact_kdes(x * math.sqrt(t), (y * math.sqrt(t))[None], "gaussian")[0]
        assert abs(query_kde(sub, y * math.sqrt(t)) - want) <= 3 / math.sqrt(sub.spec.n_features)


class TestQuery:
    @pytest.mark.parametrize("kernel", sorted(SMOOTH_KERNELS))
    def test_copies_give_one(self, kernel):
        c = np.array([0.4, -0.3])
        a = 0.1
        s = build_smooth_kde(np.tile(c, (500, 1)), kernel, 1.0, a, rng=4, noise_off=True,
                             check_size=False)
        feature_error = 3 / math.sqrt(s.sub_sketches[0].spec.n_features) * s.approx.amplification.sum()
        assert abs(query_smooth_kde(s, c) - 1.0) <= a + feature_error

    @pytest.mark.parametrize("kernel", sorted(SMOOTH_KERNELS))
    def test_far_query(self, kernel, blob):
        x, _ = blob
        s = build_smooth_kde(x, kernel, 1.0, 0.3, rng=5)
        assert abs(query_smooth_kde(s, np.full(6, 1e4))) <= 0.3

    @pytest.mark.parametrize("kernel", sorted(SMOOTH_KERNELS))
    def test_noise_off_tracks_oracle(self, kernel, blob):
        x, q = blob
        s = build_smooth_kde(x, kernel, 1.0, 0.1, rng=6, noise_off=True, check_size=False)
        truth = exact_kdes(x, q, kernel)
        assert np.abs(query_smooth_kde(s, q) - truth).mean() <= 0.1

    def test_batch_matches_single(self, blob):
        x, q = blob
        s = build_smooth_kde(x, "inv1p-l2", 1.0, 0.3, rng=7)
        assert np.allclose(query_smooth_kde(s, q), [query_smooth_kde(s, y) for y in q])

    def test_dimension_mismatch(self, blob):
        s = build_smooth_kde(blob[0], "inv1p-l1", 1.0, 0.3, rng=7)
        with pytest.raises(ParameterError):
            query_smooth_kde(s, np.zeros(5))

    def test_projection_relative_gap(self):
        g = np.random.default_rng(8)
        x = g.normal(0, 0.05, (3000, 256))
        q = x[:30] + g.normal(0, 0.02, (30, 256))
        a = 0.3
        on = build_smooth_kde(x, "inv1p-l2sq", 1.0, a, rng=RngStream(9), noise_off=True)
        off = build_smooth_kde(x, "inv1p-l2sq", 1.0, a, rng=RngStream(9), noise_off=True,
                               use_projection=False)
        assert on.projection is not None
        vo, vf = query_smooth_kde(on, q), query_smooth_kde(off, q)
        assert np.mean(np.abs(vo - vf) / np.abs(vf)) <= 8 * a
