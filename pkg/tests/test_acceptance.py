"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line through the ``criterion`` fixture; the
lines are repeated in the terminal summary.
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy.linalg import hadamard

from dpsim.classify import accuracy, fit_classifier
from dpsim.cli import FUNCTIONS, run_eval
from dpsim.core import DomainPromise, PrivacyBudget, RngStream
from dpsim.highdim import build_l1, query_l1, query_lpp
from dpsim.kde import FeatureMapSpec, build_kde, feature_sensitivity, mean_features, query_kde
from dpsim.l2sq import SPREAD_SENSITIVITY_CONSTANT, exact_moments
from dpsim.onedim import build_tree, distance_query, node_counts, tree_shape
from dpsim.oracle import exact_distance_sums, exact_kdes
from dpsim.projections import ProjectionSpec, apply_projection, choose_kde_projection_dim
from dpsim.sketchfile import dumps, loads, query
from dpsim.smooth import build_smooth_kde, exp_sum_approx, query_smooth_kde
from sketch_factory import random_sketch


def log_uniform_int(g, lo, hi):
    return int(round(math.exp(g.uniform(math.log(lo), math.log(hi)))))


def test_1_oracle_equivalence(criterion):
    g = np.random.default_rng(101)
    alphas = (0.05, 0.1, 0.3)
    worst = {"1-d": 0.0, "l1": 0.0, "lpp": 0.0}

    start = time.perf_counter()
    for i in range(100):
        n = log_uniform_int(g, 1, 10_000)
        r = float(g.uniform(0.5, 5.0))
        x = g.random(n)
        t = build_tree(x, 1.0, noise_off=True, scale=r)
        ys = np.concatenate(([0.0, 1.0], g.random(5)))
        truth = exact_distance_sums(r * x[:, None], r * ys[:, None], "l1")
        for a in alphas:
            ratio = np.abs(distance_query(t, ys, a) - truth) / (a * truth + 2 * r)
            worst["1-d"] = max(worst["1-d"], ratio.max())
    one_d_time = time.perf_counter() - start

    for i in range(100):
        n = log_uniform_int(g, 1, 10_000)
        d = int(g.integers(1, 65))
        r = float(g.uniform(0.5, 5.0))
        x = g.random((n, d)) * r
        ys = g.random((3, d)) * r
        truth = exact_distance_sums(x, ys, "l1")
        for a in alphas:
            s = build_l1(x, PrivacyBudget(1.0), a, DomainPromise("box", r, d), noise_off=True)
            ratio = np.abs(query_l1(s, ys) - truth) / (a * truth + 2 * r * d)
            worst["l1"] = max(worst["l1"], ratio.max())

    for i in range(100):
        n = log_uniform_int(g, 1, 10_000)
        d = int(g.integers(1, 17))
        p = (1.0, 2.0, 3.0)[i % 3]
        r = float(g.uniform(0.5, 3.0))
        x = g.random((n, d)) * r
        ys = g.random((3, d)) * r
        truth = exact_distance_sums(x, ys, "lpp", p)
        for a in alphas:
            s = build_l1(x, PrivacyBudget(1.0), a, DomainPromise("box", r, d), p=p,
                         noise_off=True)
            ratio = np.abs(query_lpp(s, ys, p) - truth) / (a * truth + 2 * r**p * d)
            worst["lpp"] = max(worst["lpp"], ratio.max())

    ok = max(worst.values()) <= 1.0 and one_d_time < 30.0
    criterion(1, ok, "worst error/slack " + ", ".join(f"{k}={v:.3f}" for k, v in worst.items())
              + f"; 1-d runtime {one_d_time:.1f}s")


def test_2_sensitivity_audits(criterion):
    g = np.random.default_rng(102)
    violations = {"tree": 0, "features": 0, "l2sq": 0}
    checked = {"tree": 0, "features": 0, "l2sq": 0}

    # Node counts are additive over points, so a replacement changes them by
    # counts({a}) - counts({b}) whatever the other n - 1 points are; every
    # leaf pair (a, b) therefore covers every neighbouring pair.
    for n in range(1, 17):
        depth, _ = tree_shape(n)
        grid = np.arange(n + 1) / n
        others = g.random(n - 1)
        for a, b in itertools.product(grid, grid):
            diff = np.abs(node_counts(np.append(others, a), n)
                          - node_counts(np.append(others, b), n))
            single = np.abs(node_counts(np.array([a]), n) - node_counts(np.array([b]), n))
            checked["tree"] += 1
            if diff.sum() > 2 * (depth + 1) or not np.array_equal(diff, single):
                violations["tree"] += 1

    pool = g.normal(size=(12, 2)) * 2
    for kernel, big_d in itertools.product(("gaussian", "exponential", "laplacian"),
                                           (1, 2, 4, 8, 16, 32, 64)):
        spec = FeatureMapSpec(kernel, 2, big_d, int(g.integers(1 << 30)))
        for n in range(1, 17):
            rows = pool[g.integers(0, len(pool), n - 1)]
            means = [mean_features(spec, np.vstack([rows, p])) for p in pool]
            for ma, mb in itertools.combinations(means, 2):
                checked["features"] += 1
                if np.abs(ma - mb).sum() > feature_sensitivity(big_d, n) + 1e-12:
                    violations["features"] += 1

    r, d = 1.0, 2
    cells = [np.array(c, dtype=float) for c in itertools.product((0.0, r), repeat=d)]
    for n in range(2, 7):
        for base in itertools.combinations_with_replacement(range(len(cells)), n):
            x = np.array([cells[i] for i in base])
            s = exact_moments(x)[1]
            for i, c in itertools.product(range(n), cells):
                y = x.copy()
                y[i] = c
                checked["l2sq"] += 1
                if abs(exact_moments(y)[1] - s) > SPREAD_SENSITIVITY_CONSTANT * r * r * d + 1e-12:
                    violations["l2sq"] += 1

    ok = sum(violations.values()) == 0
    criterion(2, ok, ", ".join(f"{k}: {violations[k]} violations in {checked[k]}"
                               for k in checked))


def test_3_epsilon_scaling(criterion):
    g = np.random.default_rng(103)
    x = g.random(1000)
    ys = np.linspace(0, 1, 101)
    truth = exact_distance_sums(x[:, None], ys[:, None], "l1")
    root = RngStream(103)

    def mean_err(eps, branch):
        return np.mean([np.abs(distance_query(build_tree(x, eps, root.child(branch).child(t)),
                                              ys, 0.1) - truth).mean() for t in range(200)])

    ratio = mean_err(2.0, 1) / mean_err(1.0, 0)
    criterion(3, 0.35 <= ratio <= 0.65, f"error(eps=2)/error(eps=1) = {ratio:.3f} (200 trials)")


def test_4_epsilon_sweep(criterion):
    g = np.random.default_rng(104)
    x = g.random(1000)[:, None]
    ys = np.linspace(0, 1, 1000)[:, None]
    eps = [0.5, 1, 2, 4, 8, 16]
    rows = run_eval("l1", x, ys, eps, trials=20, seed=104, radius=1.0, alpha=0.05)
    rel = [r["relative_error"] for r in rows if r["method"] == "dpsim"]
    zero = [r for r in rows if r["method"] == "zero-baseline"][0]
    ok = (all(a > b for a, b in zip(rel, rel[1:])) and rel[-1] < 0.5
          and zero["relative_error"] == 1.0)
    criterion(4, ok, "relative error " + " ".join(f"{e:g}:{r:.4f}" for e, r in zip(eps, rel))
              + f"; zero baseline {zero['relative_error']:.1f}")


@pytest.fixture(scope="module")
def kde_instance():
    g = np.random.default_rng(1)
    x = g.normal(0, 0.15, (10_000, 32))
    q = x[g.choice(10_000, 100)] + g.normal(0, 0.05, (100, 32))
    return x, q


def test_5_kde_utility(criterion, kde_instance):
    x, q = kde_instance
    truth = exact_kdes(x, q, "gaussian")
    start = time.perf_counter()
    sketch = build_kde(x, "gaussian", 1.0, 0.1, rng=RngStream(105))
    est = query_kde(sketch, q)
    elapsed = time.perf_counter() - start
    err = float(np.abs(est - truth).mean())
    ok = err <= 0.1 and elapsed < 120 and sketch.spec.n_features == 800
    criterion(5, ok, f"mean |error| {err:.4f} (mean KDE {truth.mean():.3f}), D=800, "
                     f"build+query {elapsed:.2f}s")


def test_6_projection_distortion(criterion):
    g = np.random.default_rng(106)
    d = 64
    k = choose_kde_projection_dim("gaussian", 0.1)
    k_cauchy = choose_kde_projection_dim("cauchy", 0.1)
    dev_exp, dev_gauss, dev_cauchy = [], [], []
    for seed in range(1000):
        v = g.normal(size=d)
        v *= math.exp(g.uniform(math.log(0.01), math.log(20.0))) / np.linalg.norm(v)
        dist = float(np.linalg.norm(v))
        proj = float(np.linalg.norm(apply_projection(ProjectionSpec("gaussian-jl", d, k, seed), v)))
        dev_exp.append(abs(math.exp(-proj) - math.exp(-dist)))
        dev_gauss.append(abs(math.exp(-proj**2) - math.exp(-dist**2)))
        pc = float(np.linalg.norm(apply_projection(
            ProjectionSpec("gaussian-jl", d, k_cauchy, seed + 10_000), v)))
        f, fp = 1 / (1 + dist**2), 1 / (1 + pc**2)
        dev_cauchy.append(abs(fp - f) / f)
    m_exp, m_gauss, m_cauchy = np.mean(dev_exp), np.mean(dev_gauss), np.mean(dev_cauchy)
    ok = m_exp <= 0.1 and m_gauss <= 0.1 and m_cauchy <= 8 * 0.1
    criterion(6, ok, f"k={k}: exp {m_exp:.4f}, gauss {m_gauss:.4f}; k={k_cauchy}: "
                     f"cauchy relative {m_cauchy:.4f} (bound 0.8)")


def test_7_projection_benefit(criterion):
    g = np.random.default_rng(5)
    d, n = 2048, 4000
    centres = g.normal(0, 0.02, (20, d))
    x = centres[g.integers(0, 20, n)] + g.normal(0, 0.0156, (n, d))
    q = centres[g.integers(0, 20, 1000)] + g.normal(0, 0.0156, (1000, d))
    truth = exact_kdes(x, q, "gaussian")
    # plain and projected builds alternate so both see the same machine load
    builds = {False: [], True: []}
    queries = {False: [], True: []}
    errs = {False: [], True: []}
    dims = {}
    for rep in range(7):
        for projected in (False, True):
            t0 = time.perf_counter()
            s = build_kde(x, "gaussian", 1.0, 0.1, projected, RngStream(107).child(rep),
                          projection_dim=1000)
            t1 = time.perf_counter()
            est = query_kde(s, q)
            t2 = time.perf_counter()
            builds[projected].append(t1 - t0)
            queries[projected].append(t2 - t1)
            errs[projected].append(np.abs(est - truth).mean())
            dims[projected] = s.internal_dim
    stats = {p: (np.median(builds[p]), np.median(queries[p]), float(np.mean(errs[p])), dims[p])
             for p in (False, True)}
    (b0, q0, e0, k0), (b1, q1, e1, k1) = stats[False], stats[True]
    ok = b1 < b0 and q1 < q0 and abs(e1 - e0) <= 0.05 and k1 == 1000 and k0 == d
    criterion(7, ok, f"build {b0:.3f}s -> {b1:.3f}s, query {q0:.3f}s -> {q1:.3f}s, "
                     f"error {e0:.4f} -> {e1:.4f} (gap {abs(e1 - e0):.4f})")


def test_8_exp_sum_certificate(criterion):
    x = np.geomspace(1.0, 1e6, 10_000)
    parts, ok = [], True
    for a in (0.1, 0.01, 0.001):
        approx = exp_sum_approx(a)
        sup = float(np.abs(approx(x) - 1 / x).max())
        ok &= sup <= a and approx.n_terms <= 25 * math.log(1 / a)
        parts.append(f"alpha={a:g}: sup {sup:.2e}, {approx.n_terms} terms")
    criterion(8, ok, "; ".join(parts))


def test_9_smooth_kde(criterion, kde_instance):
    x, q = kde_instance
    truth = exact_kdes(x, q, "inv1p-l2sq")
    sketch = build_smooth_kde(x, "inv1p-l2sq", 1.0, 0.1, rng=RngStream(109))
    err = float(np.abs(query_smooth_kde(sketch, q) - truth).mean())
    criterion(9, err <= 0.1, f"mean |error| {err:.4f} (mean KDE {truth.mean():.3f}), "
                             f"{sketch.approx.n_terms} sub-sketches")


def test_10_classifier(criterion):
    g = np.random.default_rng(110)
    d, sigma = 64, 1.0
    # ten rows of a Hadamard matrix, scaled so every pair of means is 10 sigma apart
    centres = hadamard(d)[1:11] / 8 * (10 * sigma / math.sqrt(2))

    def sample(n):
        y = g.integers(0, 10, n)
        return centres[y] + g.normal(0, sigma, (n, d)), y

    x, y = sample(10_000)
    xt, yt = sample(2000)
    budget = PrivacyBudget(1.0, 1e-5)
    exact = accuracy(fit_classifier(x, y, budget, clip=1.5, noise_off=True), xt, yt)
    noisy = []
    times = []
    for seed in range(10):
        t0 = time.perf_counter()
        clf = fit_classifier(x, y, budget, clip=1.5, rng=RngStream(110).child(seed))
        acc = accuracy(clf, xt, yt)
        times.append(time.perf_counter() - t0)
        noisy.append(acc)
    ok = exact >= 0.99 and min(noisy) >= exact - 0.05 and max(times) < 1.0
    criterion(10, ok, f"noise-off {exact:.4f}, private min {min(noisy):.4f} "
                      f"mean {np.mean(noisy):.4f}, fit+predict max {max(times):.3f}s")


def test_11_serialization(criterion):
    mismatched = 0
    for seed in range(1000):
        fn = FUNCTIONS[seed % len(FUNCTIONS)]
        sketch, q = random_sketch(fn, seed)
        blob = dumps(sketch)
        back = loads(blob)
        same_bytes = dumps(back) == blob
        same_answers = (np.atleast_1d(query(sketch, q)).tobytes()
                        == np.atleast_1d(query(back, q)).tobytes())
        mismatched += not (same_bytes and same_answers)
    criterion(11, mismatched == 0, f"{mismatched} mismatches in 1000 round-trips "
                                   f"over {len(FUNCTIONS)} functions")
