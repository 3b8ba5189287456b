import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfgibbs.cflm import (
    ConstrainedState,
    cflpk_apply,
    consistency_residual,
    entropy_lower_bound,
    fixed_point,
    flat_state,
    initial_fixed_point,
    initial_gamma1,
    initial_rate,
    j_constrained,
    kernel_state,
    multistart,
    psi,
    psi_homogeneous,
    random_state,
    state_distance,
    transformed_interaction,
    transformed_rate,
)
from mfgibbs.errors import InvalidParameter
from mfgibbs.kernels import spin_flip_h
from mfgibbs.models import ising_interaction, ising_pspin
from mfgibbs.spinspace import Measure, make_ising_space, random_measure, relative_entropy, tau_measure

T_HALF = math.log(2.0) / 2.0
M_CW = 0.9575040240772687  # root of m = tanh(2 m)


def _tau(model, tau):
    return tau_measure(model.kernel.space_sp, tau)


def test_state_normalisation(ising_weak, rng):
    nu = _tau(ising_weak, 0.3)
    s = random_state(ising_weak, nu, rng)
    assert s.normalisation_error(ising_weak.alpha) < 1e-14
    out = cflpk_apply(ising_weak, s)
    assert out.normalisation_error(ising_weak.alpha) < 1e-14
    assert out.joint(ising_weak.alpha).sum() == pytest.approx(1.0, abs=1e-14)
    # second marginal is preserved
    np.testing.assert_allclose(out.joint(ising_weak.alpha).sum(axis=1), nu.weights, atol=1e-15)


def test_zero_coupling_is_one_step():
    model = ising_pspin(0.0, 2, 0.4).model()
    nu = _tau(model, 0.6)
    rep = fixed_point(model, nu, flat_state(model, nu))
    assert rep.converged
    np.testing.assert_allclose(rep.state.cond_density, model.kernel.density.T, atol=1e-15)
    m = rep.state.first_marginal(model.alpha) @ model.gm
    assert m[0] == pytest.approx(0.6 * math.tanh(spin_flip_h(0.4)), abs=1e-15)


def test_fixed_point_weak_coupling(ising_weak):
    nu = _tau(ising_weak, 0.5)
    rep = fixed_point(ising_weak, nu)
    assert rep.converged and rep.residual <= 1e-12
    assert consistency_residual(ising_weak, rep.state) <= 1e-12
    # m' solves the mean-field equation of the preset
    m = float(rep.state.first_marginal(ising_weak.alpha) @ ising_weak.gm[:, 0])
    rhs = ising_pspin(0.5, 2, T_HALF).closed_forms["mf_rhs"](m, 0.5)
    assert m == pytest.approx(float(rhs), abs=1e-11)
    assert m == pytest.approx(-0.3881290163962624, abs=1e-10)


def test_fixed_point_argument_checks(ising_weak):
    nu = _tau(ising_weak, 0.0)
    with pytest.raises(InvalidParameter):
        fixed_point(ising_weak, nu, tol=0.0)
    with pytest.raises(InvalidParameter):
        fixed_point(ising_weak, nu, damping=1.5)


def test_nonconvergence_reported(ising_strong):
    nu = _tau(ising_strong, 0.3)
    rep = fixed_point(ising_strong, nu, random_state(ising_strong, nu, np.random.default_rng(0)),
                      max_iter=3)
    assert not rep.converged and rep.iterations == 3


def test_damped_iteration_reaches_same_point(ising_weak):
    nu = _tau(ising_weak, -0.2)
    a = fixed_point(ising_weak, nu)
    b = fixed_point(ising_weak, nu, damping=0.5)
    assert b.converged
    assert state_distance(ising_weak, a.state, b.state) < 1e-11


def test_residual_zero_exactly_on_consistent_states(ising_weak, rng):
    nu = _tau(ising_weak, 0.1)
    assert consistency_residual(ising_weak, random_state(ising_weak, nu, rng)) > 1e-3
    zero = ConstrainedState(nu, np.array([[2.0, 0.0], [1.0, 1.0]]))
    assert consistency_residual(ising_weak, zero) == float("inf")


def test_saddle_and_two_wells(ising_strong):
    res = multistart(ising_strong, _tau(ising_strong, 0.0), n_starts=8, seed=3)
    mags = sorted(float(c.magnetization(ising_strong)[0]) for c in res.clusters)
    assert len(res.clusters) == 3
    np.testing.assert_allclose(mags, [-0.957504023880331, 0.0, 0.957504023880331], atol=1e-9)
    best = res.psi_minimal()
    assert len(best) == 2 and res.psi_gap < 1e-9


def test_single_well_regime(ising_weak):
    res = multistart(ising_weak, _tau(ising_weak, 0.5), n_starts=16)
    assert len(res.clusters) == 1 and res.failed == 0
    assert res.psi_gap == float("inf")


def test_n_starts_checked(ising_weak):
    with pytest.raises(InvalidParameter):
        multistart(ising_weak, _tau(ising_weak, 0.0), n_starts=0)


@given(st.floats(-1, 1), st.integers(0, 10_000))
def test_psi_below_j(tau, seed):
    model = ising_pspin(1.2, 2, 0.3).model()
    nu = _tau(model, tau)
    s = random_state(model, nu, np.random.default_rng(seed))
    assert psi(model, s) <= j_constrained(model, s) + 1e-12
    assert psi(model, s) == pytest.approx(psi_homogeneous(model, s), abs=1e-12)
    m = model.moments(s.first_marginal(model.alpha))
    ent = j_constrained(model, s) - model.interaction.F(m) + _logk(model, s)
    assert entropy_lower_bound(model, s) <= ent + 1e-12


def _logk(model, s):
    w = s.joint(model.alpha)
    return float(np.sum(w * model.log_kt))


@pytest.mark.parametrize("tau", [-0.7, 0.0, 0.4])
def test_psi_equals_j_at_fixed_points(ising_strong, tau):
    for cl in multistart(ising_strong, _tau(ising_strong, tau), n_starts=6).clusters:
        assert abs(cl.psi - cl.j) <= 1e-9


def test_psi_homogeneous_cubic():
    model = ising_pspin(0.8, 3, 0.5).model()
    s = random_state(model, _tau(model, 0.2), np.random.default_rng(0))
    assert psi(model, s) == pytest.approx(psi_homogeneous(model, s), abs=1e-12)


def test_psi_homogeneous_needs_degree(rotator_cert):
    from mfgibbs.cflm import Model
    from mfgibbs.interaction import Interaction
    i = rotator_cert.interaction
    bare = Interaction(i.l, i.g, i.F, i.F_grad, i.F_hess, None, i.name, i.constants)
    m = Model(bare, rotator_cert.kernel)
    nu = Measure(m.kernel.space_sp, m.kernel.space_sp.weights)
    with pytest.raises(InvalidParameter):
        psi_homogeneous(m, kernel_state(m, nu))


def test_transformed_interaction_flags(ising_strong, rotator_cert):
    ti = transformed_interaction(ising_strong, _tau(ising_strong, 0.5), n_starts=4)
    assert ti.search_incomplete_possible
    ti = transformed_interaction(rotator_cert, random_measure(rotator_cert.kernel.space_sp,
                                                              np.random.default_rng(0)), n_starts=2)
    assert not ti.search_incomplete_possible and not ti.lower_confidence
    assert len(ti.clusters) == 1


def test_transformed_rate_zero_coupling():
    model = ising_pspin(0.0, 2, 0.7).model()
    grid = [_tau(model, x) for x in np.linspace(-1, 1, 11)]
    rate = transformed_rate(model, grid, n_starts=2)
    expect = [relative_entropy(nu, model.kernel.space_sp.apriori) for nu in grid]
    np.testing.assert_allclose(rate, expect, atol=1e-12)


def test_initial_curie_weiss():
    inter = ising_interaction(2.0, 2)
    clusters = initial_fixed_point(inter, make_ising_space(), n_starts=16)
    mags = sorted(round(float(c.magnetization[0]), 9) for c in clusters)
    assert mags == [round(-M_CW, 9), 0.0, round(M_CW, 9)]
    assert clusters[0].free_energy == pytest.approx(clusters[1].free_energy, abs=1e-12)
    assert initial_rate(inter, clusters[0].measure, clusters) == pytest.approx(0.0, abs=1e-12)
    assert initial_rate(inter, make_ising_space().apriori, clusters) > 0


def test_initial_gamma1_is_consistent():
    inter = ising_interaction(0.5, 2)
    nu = initial_fixed_point(inter, make_ising_space(), n_starts=2)[0].measure
    np.testing.assert_allclose(initial_gamma1(inter, nu).weights, nu.weights, atol=1e-12)
