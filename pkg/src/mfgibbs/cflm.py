"""Constrained first-layer model.

For a frozen second-layer empirical measure ``nu'`` the joint measures with
that second marginal are parameterised by a conditional alpha-density
``f[eta, s]``. The self-consistency map (``cflpk_apply``) sends a state to

    f'[eta, s] = exp(-Phi1(pi_1 state, s)) k(s, eta) / Z_eta(pi_1 state),

and its fixed points are the candidates for the minimisers of the
constrained rate function ``J``. The potential ``Psi`` agrees with ``J`` on
those fixed points, so clusters of fixed points are ranked by ``Psi``.

All exponentials are evaluated with a per-row max shift; rows with
``nu'(eta) = 0`` are carried along but excluded from every sum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidParameter, NoConsistentMeasure, NumericalUnderflow
from .interaction import phi, resolve_constants
from .kernels import rho_alpha_k
from .spinspace import Measure, relative_entropy

log = logging.getLogger(__name__)

TOL = 1e-12
MAX_ITER = 100_000
N_STARTS = 32
CLUSTER_TOL = 1e-8
TIE_TOL = 1e-9
OSCILLATION_WINDOW = 50


@dataclass(frozen=True, eq=False)
class Model:
    """An interaction on the initial space together with a joint kernel."""

    interaction: object
    kernel: object
    probe_count: int = 4096
    seed: int = 0

    @cached_property
    def gm(self):
        return self.interaction.observables(self.kernel.space_s)

    @cached_property
    def alpha(self):
        return self.kernel.space_s.weights

    @cached_property
    def log_alpha(self):
        return np.log(self.alpha)

    @cached_property
    def log_kt(self):
        """``log k`` transposed to (n_eta, n_sigma); -inf off the support."""
        return self.kernel.log_density.T

    @cached_property
    def support(self):
        return self.kernel.density.T > 0

    @cached_property
    def constants(self):
        return resolve_constants(self.interaction, self.kernel.space_s,
                                 self.probe_count, self.seed)

    @cached_property
    def lipschitz(self):
        """Contraction constant ``L = C(F, g) rho_alpha(k)``."""
        return float(self.constants.c_of_F_g * rho_alpha_k(self.kernel))

    def moments(self, first_marginal):
        return first_marginal @ self.gm

    def field(self, m):
        return self.interaction.field(m, self.gm)


@dataclass(frozen=True, eq=False)
class ConstrainedState:
    """Element of ``M_{nu'}``: fixed second marginal plus conditional alpha-densities."""

    nu_prime: Measure
    cond_density: np.ndarray

    def __post_init__(self):
        f = np.array(self.cond_density, dtype=float)
        if f.ndim != 2 or f.shape[0] != self.nu_prime.space.size:
            raise InvalidParameter(f"conditional density has shape {f.shape}")
        if np.any(f < 0) or not np.all(np.isfinite(f)):
            raise InvalidParameter("conditional densities must be finite and nonnegative")
        f.setflags(write=False)
        object.__setattr__(self, "cond_density", f)

    def first_marginal(self, alpha):
        return alpha * (self.nu_prime.weights @ self.cond_density)

    def joint(self, alpha):
        """Joint weights over (eta, sigma)."""
        return self.nu_prime.weights[:, None] * self.cond_density * alpha[None, :]

    def normalisation_error(self, alpha):
        rows = self.cond_density @ alpha
        active = self.nu_prime.weights > 0
        return float(np.max(np.abs(rows[active] - 1.0))) if active.any() else 0.0


@dataclass
class FixedPointReport:
    state: ConstrainedState
    iterations: int
    residual: float
    converged: bool
    psi_value: float
    j_value: float
    step_distance: float = float("nan")
    damping: float = 1.0
    damping_halvings: int = 0
    start: str = ""


@dataclass
class Cluster:
    """Converged fixed points that agree within the clustering tolerance."""

    representative: FixedPointReport
    members: list = field(default_factory=list)

    @property
    def psi(self):
        return self.representative.psi_value

    @property
    def j(self):
        return self.representative.j_value

    @property
    def residual(self):
        return self.representative.residual

    @property
    def state(self):
        return self.representative.state

    def magnetization(self, model):
        return model.moments(self.state.first_marginal(model.alpha))

    def to_dict(self, model):
        return {
            "psi": self.psi,
            "j": self.j,
            "residual": self.residual,
            "size": len(self.members),
            "magnetization_vector": self.magnetization(model).tolist(),
        }


# -- states -------------------------------------------------------------------


def _normalise_rows(f, alpha):
    z = f @ alpha
    return f / z[:, None]


def kernel_state(model, nu_prime):
    """State with ``f(s | eta) = k(s, eta)``."""
    return ConstrainedState(nu_prime, model.kernel.density.T.copy())


def flat_state(model, nu_prime):
    """Uniform conditional density on the support of ``k(., eta)``."""
    return ConstrainedState(nu_prime, _normalise_rows(model.support.astype(float), model.alpha))


def random_state(model, nu_prime, rng, spread=2.0):
    """Density ``exp(U[-spread, spread])`` per (eta, s) on supp k, renormalised per eta."""
    f = np.exp(rng.uniform(-spread, spread, model.support.shape)) * model.support
    return ConstrainedState(nu_prime, _normalise_rows(f, model.alpha))


def state_distance(model, a, b):
    """Variational distance between the joint measures of two states."""
    return 0.5 * float(np.abs(a.joint(model.alpha) - b.joint(model.alpha)).sum())


# -- the self-consistency map -----------------------------------------------------


def _log_unnormalised(model, first_marginal):
    m = model.moments(first_marginal)
    fld = model.field(m)
    return -fld[None, :] + model.log_kt, fld, m


def _log_normalisers(model, logw):
    lz = logsumexp(logw + model.log_alpha[None, :], axis=1)
    if np.any(~np.isfinite(lz)):
        raise NumericalUnderflow("CFLPK normaliser vanished for some eta")
    return lz


def _apply_density(model, state):
    logw, _, _ = _log_unnormalised(model, state.first_marginal(model.alpha))
    lz = _log_normalisers(model, logw)
    return np.exp(logw - lz[:, None]), logw - lz[:, None]


def cflpk_apply(model, state):
    """One application of the constrained first-layer probability kernel."""
    f, _ = _apply_density(model, state)
    return ConstrainedState(state.nu_prime, f)


def consistency_residual(model, state):
    """Sup over active (s, eta) with k > 0 of ``|log f - log cflpk(f)|``.

    Zero exactly on consistent states; ``inf`` when f vanishes where k > 0.
    """
    active = (state.nu_prime.weights > 0)[:, None] & model.support
    f = state.cond_density
    if np.any(f[active] <= 0):
        return float("inf")
    _, log_tf = _apply_density(model, state)
    return float(np.max(np.abs(np.log(f[active]) - log_tf[active]))) if active.any() else 0.0


# -- rate functions -----------------------------------------------------------------


def _weighted_log_z(model, state):
    logw, fld, m = _log_unnormalised(model, state.first_marginal(model.alpha))
    lz = _log_normalisers(model, logw)
    nu = state.nu_prime.weights
    active = nu > 0
    return float(nu[active] @ lz[active]), fld, m


def _phi_terms(model, m):
    F = float(model.interaction.F(m))
    phi1_self = float(np.dot(model.interaction.F_grad(m), m))
    return F, phi1_self


def _entropy_and_logk(model, state):
    """``S(state | alpha x nu')`` and ``state[log k]`` with 0 log 0 = 0."""
    w = state.joint(model.alpha)
    f = state.cond_density
    pos = w > 0
    ent = float(np.sum(w[pos] * np.log(f[pos])))
    if np.any(pos & ~model.support):
        return ent, float("-inf")
    return ent, float(np.sum(w[pos] * model.log_kt[pos]))


def j_constrained(model, state):
    """``J = S(state | alpha x nu') + Phi(pi_1 state) - state[log k]``."""
    ent, logk = _entropy_and_logk(model, state)
    m = model.moments(state.first_marginal(model.alpha))
    return ent + float(model.interaction.F(m)) - logk


def psi(model, state):
    """``Psi = Phi - Phi1(pi_1, pi_1) - sum_eta nu'(eta) log Z_eta``."""
    wlz, _, m = _weighted_log_z(model, state)
    F, phi1_self = _phi_terms(model, m)
    return F - phi1_self - wlz


def psi_homogeneous(model, state):
    """``Psi`` for a degree-p homogeneous interaction: ``(1 - p) Phi - sum nu' log Z``."""
    p = model.interaction.homogeneity_degree
    if p is None:
        raise InvalidParameter("interaction declares no homogeneity degree")
    wlz, _, m = _weighted_log_z(model, state)
    return (1.0 - p) * float(model.interaction.F(m)) - wlz


def entropy_lower_bound(model, state):
    """Right side of the single-site variational inequality for ``S(state | alpha x nu')``."""
    wlz, _, m = _weighted_log_z(model, state)
    _, phi1_self = _phi_terms(model, m)
    _, logk = _entropy_and_logk(model, state)
    return -phi1_self + logk - wlz


# -- fixed points ----------------------------------------------------------------------


def fixed_point(model, nu_prime, f0=None, tol=TOL, max_iter=MAX_ITER, damping=1.0, start=""):
    """Damped Picard iteration of :func:`cflpk_apply`.

    Stops once the step distance is below ``tol`` and the consistency residual
    is at most ``tol``. Fifty consecutive increases of the step distance halve
    the damping. Non-convergence is reported, not raised.
    """
    if tol <= 0:
        raise InvalidParameter("tol must be positive")
    if not 0 < damping <= 1:
        raise InvalidParameter(f"damping must lie in (0, 1], got {damping}")
    state = f0 if f0 is not None else kernel_state(model, nu_prime)
    if state.nu_prime is not nu_prime:
        state = ConstrainedState(nu_prime, state.cond_density)
    active = (nu_prime.weights > 0)[:, None] & model.support
    nu_alpha = nu_prime.weights[:, None] * model.alpha[None, :]

    f = np.array(state.cond_density)
    step = np.inf
    rising = 0
    halvings = 0
    residual = np.inf
    it = 0
    while it < max_iter:
        it += 1
        tf, log_tf = _apply_density(model, ConstrainedState(nu_prime, f))
        with np.errstate(divide="ignore"):
            residual = float(np.max(np.abs(np.log(f[active]) - log_tf[active]))) if active.any() else 0.0
        new = tf if damping == 1.0 else (1.0 - damping) * f + damping * tf
        new_step = 0.5 * float(np.sum(nu_alpha * np.abs(new - f)))
        rising = rising + 1 if new_step > step else 0
        step = new_step
        if residual <= tol and step < tol:
            # f is already consistent to tol; keep the un-updated iterate whose
            # residual was just measured.
            break
        f = new
        if rising >= OSCILLATION_WINDOW:
            damping *= 0.5
            halvings += 1
            rising = 0
            log.info("fixed_point: oscillation detected, damping halved to %g", damping)
    final = ConstrainedState(nu_prime, f)
    residual = consistency_residual(model, final)
    converged = residual <= tol and step < tol
    return FixedPointReport(
        state=final,
        iterations=it,
        residual=residual,
        converged=bool(converged),
        psi_value=psi(model, final),
        j_value=j_constrained(model, final),
        step_distance=step,
        damping=damping,
        damping_halvings=halvings,
        start=start,
    )


def _cluster(model, reports, cluster_tol):
    clusters = []
    for rep in reports:
        for cl in clusters:
            if state_distance(model, cl.representative.state, rep.state) < cluster_tol:
                cl.members.append(rep)
                if rep.residual < cl.representative.residual:
                    cl.representative = rep
                break
        else:
            clusters.append(Cluster(rep, [rep]))
    clusters.sort(key=lambda c: c.psi)
    return clusters


@dataclass
class MultistartResult:
    clusters: list
    runs: int
    failed: int

    def psi_minimal(self, tie_tol=TIE_TOL):
        if not self.clusters:
            return []
        best = self.clusters[0].psi
        return [c for c in self.clusters if c.psi - best < tie_tol]

    @property
    def psi_gap(self):
        if len(self.clusters) < 2:
            return float("inf")
        return self.clusters[1].psi - self.clusters[0].psi


def multistart(model, nu_prime, n_starts=N_STARTS, seed=0, cluster_tol=CLUSTER_TOL,
               tol=TOL, max_iter=MAX_ITER, damping=1.0):
    """Fixed points from the flat start, the kernel start and ``n_starts`` random starts.

    Converged states are clustered by joint variational distance and the
    clusters are sorted by ``Psi``. Clusters are classified by ``Psi`` value
    only: a cluster may be a saddle of ``J`` rather than a minimiser.
    """
    if n_starts < 1:
        raise InvalidParameter("n_starts must be >= 1")
    rng = np.random.default_rng(seed)
    starts = [("flat", flat_state(model, nu_prime)), ("kernel", kernel_state(model, nu_prime))]
    starts += [(f"random{i}", random_state(model, nu_prime, rng)) for i in range(n_starts)]
    reports = [fixed_point(model, nu_prime, s, tol, max_iter, damping, start=name)
               for name, s in starts]
    good = [r for r in reports if r.converged]
    return MultistartResult(_cluster(model, good, cluster_tol), len(reports),
                            len(reports) - len(good))


# -- transformed system --------------------------------------------------------------


@dataclass
class TransformedInteraction:
    phi_k: float
    clusters: list
    lower_confidence: bool
    search_incomplete_possible: bool


def transformed_interaction(model, nu_prime, n_starts=N_STARTS, seed=0,
                            cluster_tol=CLUSTER_TOL, tol=TOL):
    """``Phi_k(nu') = min Psi`` over the fixed-point clusters found by multistart."""
    res = multistart(model, nu_prime, n_starts, seed, cluster_tol, tol)
    if not res.clusters:
        raise NoConsistentMeasure("no fixed-point run converged")
    uncertified = model.lipschitz >= 1.0
    return TransformedInteraction(
        phi_k=res.clusters[0].psi,
        clusters=res.clusters,
        lower_confidence=uncertified and len(res.clusters) == 1,
        search_incomplete_possible=uncertified,
    )


def transformed_rate(model, nu_prime_grid, n_starts=N_STARTS, seed=0, tol=TOL):
    """``J'(nu') = S(nu' | alpha') + Phi_k(nu') - c`` with c the grid minimum."""
    alpha_p = model.kernel.space_sp.apriori
    raw = []
    for i, nu in enumerate(nu_prime_grid):
        ti = transformed_interaction(model, nu, n_starts, seed + i, tol=tol)
        raw.append(relative_entropy(nu, alpha_p) + ti.phi_k)
    raw = np.array(raw)
    return raw - raw.min()


# -- initial system -----------------------------------------------------------------


def _gamma1_weights(inter, gm, alpha, nu_weights):
    m = nu_weights @ gm
    logw = -inter.field(m, gm) + np.log(alpha)
    return np.exp(logw - logsumexp(logw))


def initial_gamma1(inter, nu):
    """``gamma_1(ds | nu) propto exp(-Phi1(nu, s)) alpha(ds)``."""
    gm = inter.observables(nu.space)
    return Measure(nu.space, _gamma1_weights(inter, gm, nu.space.weights, nu.weights))


def _free_energy(inter, nu):
    return relative_entropy(nu, nu.space.apriori) + phi(inter, nu)


@dataclass
class InitialCluster:
    measure: Measure
    free_energy: float
    magnetization: np.ndarray
    size: int = 1


def initial_fixed_point(inter, space, n_starts=N_STARTS, seed=0, tol=TOL,
                        max_iter=MAX_ITER, cluster_tol=CLUSTER_TOL):
    """Fixed points of ``gamma_1`` from the a-priori start plus random starts."""
    gm = inter.observables(space)
    alpha = space.weights
    rng = np.random.default_rng(seed)
    starts = [alpha.copy()]
    for _ in range(n_starts):
        w = alpha * np.exp(rng.uniform(-2.0, 2.0, space.size))
        starts.append(w / w.sum())
    found = []
    for w in starts:
        for _ in range(max_iter):
            new = _gamma1_weights(inter, gm, alpha, w)
            step = 0.5 * float(np.abs(new - w).sum())
            w = new
            if step < tol:
                break
        else:
            continue
        nu = Measure(space, w)
        for cl in found:
            if 0.5 * float(np.abs(cl.measure.weights - nu.weights).sum()) < cluster_tol:
                cl.size += 1
                break
        else:
            found.append(InitialCluster(nu, _free_energy(inter, nu), w @ gm))
    found.sort(key=lambda c: c.free_energy)
    return found


def initial_rate(inter, nu, clusters=None, **search):
    """``I(nu) = S(nu | alpha) + Phi(nu) - min`` over the fixed points found."""
    if clusters is None:
        clusters = initial_fixed_point(inter, nu.space, **search)
    if not clusters:
        raise NoConsistentMeasure("no fixed point of gamma_1 found")
    return _free_energy(inter, nu) - min(c.free_energy for c in clusters)
