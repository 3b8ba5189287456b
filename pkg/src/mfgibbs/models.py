"""Closed-form presets: Ising p-spin under spin flips, rotators under diffusion,
and coarse-graining of a continuous space onto partition labels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cflm import Model
from .errors import GridUnsupported, InvalidParameter
from .interaction import Interaction, InteractionConstants, quadratic_interaction, resolve_constants
from .kernels import coarse_grain_kernel, heat_kernel, spin_flip_h, spin_flip_kernel
from .spinspace import make_circle, make_ising_space, make_sphere

T_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class ModelPreset:
    name: str
    interaction: Interaction
    kernel_builder: Callable
    params: dict
    exact_constants: InteractionConstants | None = None
    closed_forms: dict = field(default_factory=dict)

    def kernel(self, **overrides):
        return self.kernel_builder(**{**self.params, **overrides})

    def model(self, use_exact=True, probe_count=4096, seed=0, **overrides):
        inter = self.interaction
        if not use_exact and inter.constants is not None:
            inter = Interaction(inter.l, inter.g, inter.F, inter.F_grad, inter.F_hess,
                                inter.homogeneity_degree, inter.name, None)
        return Model(inter, self.kernel(**overrides), probe_count, seed)


# -- Ising p-spin ------------------------------------------------------------------


def _check_p(p):
    if p < 1 or float(p) != int(p):
        raise InvalidParameter(f"p must be an integer >= 1, got {p}")
    return int(p)


def ising_interaction(beta, p):
    """``Phi(m) = -(beta/p) m^p`` on {+1, -1} with observable g(s) = s."""
    p = _check_p(p)
    beta = float(beta)
    if beta < 0:
        raise InvalidParameter("beta must be nonnegative")
    hess = beta * (p - 1) if p >= 2 else 0.0
    consts = InteractionConstants.assemble(2.0, 1.0, hess, 2.0 * beta, provenance="exact-closed-form")
    return Interaction(
        l=1,
        g=lambda nodes: np.asarray(nodes, dtype=float)[:, :1],
        F=lambda m: -beta / p * float(m[0]) ** p,
        F_grad=lambda m: np.array([-beta * float(m[0]) ** (p - 1)]),
        F_hess=lambda m: np.array([[-beta * (p - 1) * float(m[0]) ** (p - 2) if p >= 2 else 0.0]]),
        homogeneity_degree=float(p),
        name=f"ising-p{p}",
        constants=consts,
    )


def ising_pspin(beta, p, t):
    """Ising p-spin model under rate-one independent spin flips for time t.

    Closed forms: ``h_t``, ``psi_tau(m', tau)`` (Hubbard-Stratonovich
    potential, including its ``log(2 cosh h_t)`` normalisation), ``mf_rhs``
    and ``stationarity_residual = d psi_tau / d m'``.
    """
    p = _check_p(p)
    if t < T_FLOOR:
        raise InvalidParameter(f"t must be >= {T_FLOOR}, got {t}")
    beta = float(beta)
    inter = ising_interaction(beta, p)
    h = spin_flip_h(t)

    def field_(m):
        return beta * np.asarray(m, dtype=float) ** (p - 1)

    def psi_tau(m, tau):
        x = field_(m)
        return ((p - 1) * beta / p * np.asarray(m, dtype=float) ** p
                - (1 + tau) / 2 * _logcosh(x + h)
                - (1 - tau) / 2 * _logcosh(x - h)
                + math.log(2.0) + _logcosh(h))

    def mf_rhs(m, tau):
        x = field_(m)
        return (1 + tau) / 2 * np.tanh(x + h) + (1 - tau) / 2 * np.tanh(x - h)

    def stationarity_residual(m, tau):
        m = np.asarray(m, dtype=float)
        chain = (p - 1) * beta * m ** (p - 2) if p >= 2 else 0.0 * m
        return chain * (m - mf_rhs(m, tau))

    return ModelPreset(
        name="ising",
        interaction=inter,
        kernel_builder=lambda t: spin_flip_kernel(t),
        params={"t": float(t)},
        exact_constants=inter.constants,
        closed_forms={
            "h_t": lambda: h,
            "psi_tau": psi_tau,
            "mf_rhs": mf_rhs,
            "stationarity_residual": stationarity_residual,
            "L": lambda: inter.constants.c_of_F_g * ising_rho_k(t),
        },
    )


def ising_rho_k(t):
    """Posterior spread of the spin-flip kernel: ``(4 / (e^{2|h_t|} + 1))^{1/2}``."""
    h = abs(spin_flip_h(t))
    return math.sqrt(4.0 / (math.exp(2.0 * h) + 1.0))


def _logcosh(x):
    x = np.abs(np.asarray(x, dtype=float))
    return x + np.log1p(np.exp(-2.0 * x)) - math.log(2.0)


# -- rotators ------------------------------------------------------------------------


def rotator_constants(q, beta):
    return InteractionConstants.assemble(2.0 * q, 1.0, float(beta), 2.0 * beta,
                                         provenance="exact-closed-form")


def rotator_L(q, beta, t):
    """``4 sqrt(2) q beta e^beta (1 - e^{-(q-1) t})^{1/2}``."""
    return 4.0 * math.sqrt(2.0) * q * beta * math.exp(beta) * math.sqrt(-math.expm1(-(q - 1) * t))


def rotator_rho_k(q, t):
    return math.sqrt(2.0) * math.sqrt(-math.expm1(-(q - 1) * t))


def rotator(q, beta, t, n_nodes=128, n_polar=16, n_azimuth=32):
    """Curie-Weiss rotator on S^{q-1} under the diffusive (heat-kernel) evolution.

    Grid kernels exist for q = 2 (circle) and q = 3 (sphere); other q only
    serve the closed forms.
    """
    if q < 2 or int(q) != q:
        raise InvalidParameter(f"q must be an integer >= 2, got {q}")
    if beta < 0 or t <= 0:
        raise InvalidParameter("need beta >= 0 and t > 0")
    q = int(q)
    consts = rotator_constants(q, beta)
    inter = quadratic_interaction(beta, q, name=f"rotator-q{q}")
    inter = Interaction(inter.l, inter.g, inter.F, inter.F_grad, inter.F_hess,
                        inter.homogeneity_degree, inter.name, consts)

    space_cache = {}

    def build(t):
        if q == 2:
            space = space_cache.setdefault("s", make_circle(n_nodes))
        elif q == 3:
            space = space_cache.setdefault("s", make_sphere(n_polar, n_azimuth))
        else:
            raise GridUnsupported(f"no grid heat kernel for q={q}; closed forms only")
        return heat_kernel(space, t)

    return ModelPreset(
        name="rotator",
        interaction=inter,
        kernel_builder=build,
        params={"t": float(t)},
        exact_constants=consts,
        closed_forms={
            "L": lambda: rotator_L(q, beta, t),
            "rho_k": lambda: rotator_rho_k(q, t),
            "rho_alpha": lambda: math.sqrt(2.0),
            "C": lambda: consts.c_of_F_g,
        },
    )


# -- coarse graining ---------------------------------------------------------------


def coarse_grain_L(space, partition, constants):
    """``C(F, g) max_eta alpha(S_eta)^{-1/2} min_{a in S_eta} (int_{S_eta} d^2(s, a) alpha(ds))^{1/2}``."""
    labels = np.asarray([str(x) for x in partition])
    worst = 0.0
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        w = space.weights[idx]
        mass = w.sum()
        d2 = space.metric[np.ix_(idx, idx)] ** 2
        spread = math.sqrt(max(float(np.min(w @ d2)), 0.0))
        worst = max(worst, spread / math.sqrt(mass))
    return constants.c_of_F_g * worst


def coarse_grain_preset(space, partition, interaction, probe_count=4096, seed=0):
    partition = list(partition)
    consts = resolve_constants(interaction, space, probe_count, seed)
    return ModelPreset(
        name="coarse",
        interaction=interaction,
        kernel_builder=lambda: coarse_grain_kernel(space, partition),
        params={},
        exact_constants=interaction.constants,
        closed_forms={"L": lambda: coarse_grain_L(space, partition, consts)},
    )


def ising_model(beta, p, t):
    return ising_pspin(beta, p, t).model()


def default_space(q, n_nodes=128, n_polar=16, n_azimuth=32):
    return make_circle(n_nodes) if q == 2 else make_sphere(n_polar, n_azimuth)


__all__ = [
    "ModelPreset", "ising_pspin", "ising_interaction", "ising_rho_k", "rotator", "rotator_L",
    "rotator_rho_k", "rotator_constants", "coarse_grain_preset", "coarse_grain_L",
    "make_ising_space", "ising_model", "default_space",
]
