import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from scipy.stats import ks_2samp

from conetree.green import ConvergenceError, solve_boundary, solve_fixed_point
from conetree.hyperbolic import gamma, gamma_max
from conetree.operators import build_adjacency
from conetree.random_sim import (EdgeWeightSpec, LabelDistribution, PotentialSpec,
                                 build_two_sphere_context, draw_values, estimate_deviation,
                                 horizon_depth, kappa, kappa_survey, label_permutations,
                                 sample_gamma_sphere, sample_green, sample_uniforms, sweep,
                                 two_step, two_step_constants, z0_z1)
from conetree.tree import SubstitutionMatrix, ValidationError, build_truncated_tree

Z_MID = 1.5 + 1.0j


@pytest.fixture
def quartic_tree(m_quartic, adj_quartic):
    return build_truncated_tree(m_quartic, "1", horizon_depth(adj_quartic, Z_MID))


def test_uniform_stream_is_counter_based():
    a = sample_uniforms(5, 17, 100)
    np.testing.assert_array_equal(a, sample_uniforms(5, 17, 100))
    np.testing.assert_array_equal(a[:40], sample_uniforms(5, 17, 40))
    assert not np.array_equal(a, sample_uniforms(5, 18, 100))
    assert not np.array_equal(a, sample_uniforms(6, 17, 100))


def test_draws_respect_laws():
    spec = PotentialSpec((LabelDistribution("two_point", -0.5, 0.75, 0.3),
                          LabelDistribution("constant", 0.2)), 0.1, seed=3)
    labels = np.array([0, 1] * 5000)
    vals = draw_values(spec, labels, [0, 1])
    assert set(np.unique(vals[:, labels == 0])) == {-0.5, 0.75}
    assert np.all(vals[:, labels == 1] == 0.2)
    assert np.mean(vals[:, labels == 0] == -0.5) == pytest.approx(0.3, abs=0.02)
    unif = draw_values(PotentialSpec.uniform(1, 0.1), np.zeros(10000, int), [4])
    assert np.all(np.abs(unif) <= 1) and abs(unif.mean()) < 0.03


def test_spec_validation(m_quartic):
    with pytest.raises(ValidationError):
        LabelDistribution("uniform", -2, 1)
    with pytest.raises(ValidationError):
        EdgeWeightSpec([LabelDistribution()] * 2, lam=1.0)
    with pytest.raises(ValidationError):
        PotentialSpec.uniform(2, -0.1)
    spec = PotentialSpec.from_dict({"laws": {"2": {"kind": "constant", "value": 0.5}},
                                    "lam": 0.2, "seed": 9}, m_quartic)
    assert spec.laws[1].kind == "constant" and spec.laws[0].kind == "uniform"
    assert PotentialSpec.from_dict(spec.to_dict(), m_quartic) == spec


def test_zero_coupling_reproduces_fixed_point(adj_quartic, quartic_tree):
    g = sample_green(adj_quartic, quartic_tree, PotentialSpec.uniform(2, 0.0), Z_MID, 0)
    assert abs(g - solve_fixed_point(adj_quartic, Z_MID).values[0]) < 1e-14


def test_constant_potential_is_energy_shift(adj_quartic, m_quartic):
    tree = build_truncated_tree(m_quartic, "1", 8)
    spec = PotentialSpec((LabelDistribution("constant", 1.0),) * 2, lam=0.1)
    shifted = solve_fixed_point(adj_quartic, Z_MID - 0.1).values
    g = sample_green(adj_quartic, tree, spec, Z_MID, 3, leaf_seed=shifted)
    assert abs(g - shifted[0]) < 1e-14
    # with unshifted leaves the error is the truncation gap, small at this depth
    g = sample_green(adj_quartic, tree, spec, Z_MID, 3)
    assert abs(g - shifted[0]) < 1e-3


def test_zero_coupling_deviation_is_exactly_zero(adj_quartic, quartic_tree):
    for spec in (PotentialSpec.uniform(2, 0.0),
                 EdgeWeightSpec([LabelDistribution()] * 2, lam=0.0)):
        stats = estimate_deviation(adj_quartic, quartic_tree, spec, Z_MID, 2.0, 300)
        assert stats.mean == 0.0 and stats.stderr == 0.0


def test_mean_green_stays_in_upper_half_plane(adj_quartic, quartic_tree):
    stats = estimate_deviation(adj_quartic, quartic_tree, PotentialSpec.uniform(2, 0.05),
                               Z_MID, 2.0, 1000)
    assert stats.mean_im_green > 0.1
    assert stats.mean > 0 and stats.seed_gap < 1e-6


def test_edge_weights_deviation(adj_quartic, quartic_tree):
    small = estimate_deviation(adj_quartic, quartic_tree,
                               EdgeWeightSpec([LabelDistribution()] * 2, 0.02), Z_MID, 2.0, 500)
    large = estimate_deviation(adj_quartic, quartic_tree,
                               EdgeWeightSpec([LabelDistribution()] * 2, 0.2), Z_MID, 2.0, 500)
    assert 0 < small.mean < large.mean


def test_parallel_map_is_deterministic(adj_quartic, quartic_tree):
    spec = PotentialSpec.uniform(2, 0.1, seed=11)
    serial = estimate_deviation(adj_quartic, quartic_tree, spec, Z_MID, 2.0, 700)
    with ThreadPoolExecutor(4) as pool:
        threaded = estimate_deviation(adj_quartic, quartic_tree, spec, Z_MID, 2.0, 700,
                                      mapper=pool.map)
    assert serial.to_dict() == threaded.to_dict()


def test_shallow_tree_is_rejected(adj_quartic, m_quartic):
    tree = build_truncated_tree(m_quartic, "1", 2)
    with pytest.raises(ConvergenceError):
        estimate_deviation(adj_quartic, tree, PotentialSpec.uniform(2, 0.1), Z_MID, 2.0, 10)


def test_equal_labels_are_equal_in_law(adj_quartic, m_quartic):
    tree = build_truncated_tree(m_quartic, "1", 11)
    spec = PotentialSpec.uniform(2, 0.3, seed=5)
    leaf = solve_fixed_point(adj_quartic, Z_MID).values
    vals = draw_values(spec, tree.labels, range(1000))
    sphere = sweep(adj_quartic, tree, Z_MID, spec.lam, vals, "diagonal", leaf, stop_depth=1)
    # sphere 1 holds one label-1 and two label-2 vertices
    first, second = sphere[:, 1], sphere[:, 2]
    assert ks_2samp(first.real, second.real).pvalue > 1e-3
    assert ks_2samp(first.imag, second.imag).pvalue > 1e-3
    # and vertices of different labels are told apart
    assert ks_2samp(sphere[:, 0].imag, first.imag).pvalue < 1e-6


def test_two_sphere_context_counts(m_example, m_binary):
    ctx = build_two_sphere_context(build_adjacency(m_example), m_example, "1", 0.5 + 0.5j)
    assert sorted(ctx.labels.tolist()) == [0, 0, 0, 1, 1]
    assert ctx.n_perm_total == 12 and ctx.perms.shape == (12, 5) and ctx.exact_perms
    assert set(ctx.lower_labels()) <= set(ctx.labels[:ctx.n_upper])
    for k in (2, 3):
        m = SubstitutionMatrix.from_array([[k]])
        ctx = build_two_sphere_context(build_adjacency(m), m, "1", 0.5 + 0.5j)
        assert ctx.n_perm_total == math.factorial(2 * k - 1)


def test_permutations_preserve_labels():
    labels = np.array([0, 1, 0, 1, 1, 0, 0, 0, 1, 1, 0])
    perms, total, exact = label_permutations(labels, cap=1000, seed=2)
    assert not exact and total == math.factorial(6) * math.factorial(5)
    assert perms.shape == (1000, labels.size)
    assert np.all(labels[perms] == labels)
    assert all(sorted(row) == list(range(labels.size)) for row in perms)


def test_gamma_sphere_sampling(rng):
    h = np.array([1j, 0.3 + 0.2j, -1 + 2j])
    g = sample_gamma_sphere(h, 0.4, rng, 1000)
    np.testing.assert_allclose(gamma_max(g, np.broadcast_to(h, g.shape)), 0.4, rtol=1e-10)


@pytest.fixture
def boundary_context(m_quartic, adj_quartic):
    h = solve_boundary(adj_quartic, 1.5, eta_min=0.0).values
    return build_two_sphere_context(adj_quartic, m_quartic, "1", 1.5, h=h)


def test_z_values_at_reference(boundary_context):
    ctx = boundary_context
    z0, z1 = z0_z1(ctx, 1.5, 0.0, ctx.h)
    assert abs(z0) < 1e-14 and abs(z1) < 1e-14


@pytest.mark.parametrize("eta", [0.0, 0.1])
def test_z_bounds(m_quartic, adj_quartic, rng, eta):
    z = complex(1.5, eta)
    h = solve_boundary(adj_quartic, 1.5, eta_min=0.0).values if eta == 0 else None
    ctx = build_two_sphere_context(adj_quartic, m_quartic, "1", z, h=h)
    g = sample_gamma_sphere(ctx.h, rng.uniform(0.01, 5, 5000), rng, 5000)
    z0, z1 = z0_z1(ctx, z, rng.uniform(-0.2, 0.2, 5000), g, 2.0)
    gm = gamma_max(g, np.broadcast_to(ctx.h, g.shape))
    assert np.all(np.maximum(z0, 0) ** 2 <= z1 * (1 + 1e-12))
    assert np.all(z1 <= gm ** 2 * (1 + 1e-12))


def test_two_step_bound_on_real_axis(boundary_context, rng):
    ctx = boundary_context
    g = sample_gamma_sphere(ctx.h, rng.uniform(0.01, 5, 5000), rng, 5000)
    ts = two_step(ctx, 1.5, np.zeros(5000), g)
    assert np.all(ts.gamma_root <= ts.Z0 * (1 + 1e-10) + 1e-14)
    np.testing.assert_allclose(ts.gamma_root, gamma(ts.g_root, ctx.h_root))


def test_two_step_with_coupling(boundary_context, rng):
    ctx = boundary_context
    lam = 0.1
    c, C = two_step_constants(ctx, lam)
    assert two_step_constants(ctx, 0.0) == (0.0, 0.0)
    g = sample_gamma_sphere(ctx.h, rng.uniform(0.01, 5, 5000), rng, 5000)
    ts = two_step(ctx, 1.5, rng.uniform(-lam, lam, 5000), g, v_root=rng.uniform(-lam, lam, 5000))
    assert np.all(ts.gamma_root <= (1 + c) * ts.Z0 + C)


def test_kappa_range(boundary_context, rng):
    ctx = boundary_context
    g = sample_gamma_sphere(ctx.h, 1.0, rng, 500)
    k = kappa(ctx, 1.5, np.zeros(500), g)
    assert np.all((k >= 0) & (k <= 1))
    assert k.max() < 1
    with pytest.raises(ValidationError):
        kappa(ctx, 1.5, np.zeros(1), ctx.h[None])


def test_kappa_survey_is_reproducible(boundary_context):
    a = kappa_survey(boundary_context, 1.5, 0.0, 0.1, 300, seed=4)
    with ThreadPoolExecutor(3) as pool:
        b = kappa_survey(boundary_context, 1.5, 0.0, 0.1, 300, seed=4, mapper=pool.map)
    assert a.to_dict() == b.to_dict()
    assert 0 < a.delta_hat < 1 and a.max_kappa + a.delta_hat == 1
