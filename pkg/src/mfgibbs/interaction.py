"""Mean-field interactions ``Phi(nu) = F(nu[g_1], ..., nu[g_l])``.

An :class:`Interaction` bundles the observable family ``g`` with evaluators
for ``F``, its gradient and its Hessian. The derivative kernel
``Phi1(nu, delta_s) = sum_j F_j(nu[g]) g_j(s)`` acts as the local field in
every self-consistency map of the package.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DegenerateObservable, InvalidParameter
from .spinspace import moment_vector

FD_STEP = 1e-5


@dataclass(frozen=True, eq=False)
class Interaction:
    """Smooth mean-field interaction.

    ``g`` maps a node array of shape (n, d) to an observable matrix of shape
    (n, l); ``F``, ``F_grad`` and ``F_hess`` act on a moment vector of length l.
    ``constants`` optionally carries closed-form values of the norm constants
    (see :class:`InteractionConstants`) that take precedence over sampling.
    """

    l: int
    g: Callable[[np.ndarray], np.ndarray]
    F: Callable[[np.ndarray], float]
    F_grad: Callable[[np.ndarray], np.ndarray]
    F_hess: Callable[[np.ndarray], np.ndarray]
    homogeneity_degree: float | None = None
    name: str = "custom"
    constants: "InteractionConstants | None" = None

    def observables(self, space):
        gm = np.asarray(self.g(space.nodes), dtype=float)
        if gm.ndim == 1:
            gm = gm[:, None]
        if gm.shape != (space.size, self.l):
            raise InvalidParameter(
                f"observable family has shape {gm.shape}, expected {(space.size, self.l)}")
        return gm

    def field(self, m, gm):
        """Local field ``Phi1(nu, delta_s)`` at every node for moment vector ``m``."""
        return gm @ np.asarray(self.F_grad(m), dtype=float)


@dataclass(frozen=True)
class InteractionConstants:
    delta_g: float
    g_lip: float
    hess_max: float
    delta_hat_phi1: float
    c_of_F_g: float
    probe_count: int = 0
    seed: int = 0
    provenance: str = "sampled"

    @classmethod
    def assemble(cls, delta_g, g_lip, hess_max, delta_hat_phi1, probe_count=0, seed=0,
                 provenance="sampled"):
        c = 2.0 * hess_max * delta_g * g_lip * np.exp(delta_hat_phi1 / 2.0)
        return cls(float(delta_g), float(g_lip), float(hess_max), float(delta_hat_phi1),
                   float(c), int(probe_count), int(seed), provenance)


def phi(inter, nu):
    return float(inter.F(moment_vector(nu, inter.observables(nu.space))))


def phi_deriv(inter, nu, node):
    """``Phi1(nu, delta_node)`` for a node index of ``nu.space``."""
    gm = inter.observables(nu.space)
    m = nu.weights @ gm
    return float(inter.field(m, gm)[node])


def _probe_moments(gm, probe_count, seed):
    # Node images (the vertices of D_g) followed by sparse random convex
    # combinations. Probes are drawn one at a time from a single stream so the
    # first k probes do not depend on probe_count.
    rng = np.random.default_rng(seed)
    n = gm.shape[0]
    probes = [gm]
    extra = np.empty((probe_count, gm.shape[1]))
    for i in range(probe_count):
        k = min(n, int(rng.integers(1, 4)))
        idx = rng.choice(n, size=k, replace=False)
        w = rng.dirichlet(np.ones(k))
        extra[i] = w @ gm[idx]
    probes.append(extra)
    return np.vstack(probes)


def compute_constants(inter, space, probe_count=4096, seed=0):
    """Estimate the norm constants of ``inter`` on ``space``.

    Suprema over the moment set ``D_g = conv{g(nodes)}`` are taken over the
    vertices plus ``probe_count`` random convex combinations, so the Hessian
    bound and the field oscillation are lower bounds of the exact suprema
    (exact when the extremum sits at a vertex or F has constant Hessian).
    """
    if probe_count < 256:
        raise InvalidParameter(f"probe_count must be >= 256, got {probe_count}")
    gm = inter.observables(space)
    osc = gm.max(axis=0) - gm.min(axis=0)
    if np.any(osc <= 0):
        bad = np.flatnonzero(osc <= 0).tolist()
        raise DegenerateObservable(f"observable components {bad} are constant on the grid")
    delta_g = float(osc.sum())

    n = space.size
    if n > 1:
        diff = gm[:, None, :] - gm[None, :, :]
        num = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        off = ~np.eye(n, dtype=bool)
        g_lip = float(np.max(num[off] / space.metric[off]))
    else:
        g_lip = 0.0

    hess_max = 0.0
    delta_hat = 0.0
    for m in _probe_moments(gm, probe_count, seed):
        hess_max = max(hess_max, float(np.max(np.abs(inter.F_hess(m)))))
        fld = inter.field(m, gm)
        delta_hat = max(delta_hat, float(fld.max() - fld.min()))
    return InteractionConstants.assemble(delta_g, g_lip, hess_max, delta_hat,
                                         probe_count, seed, "sampled")


def resolve_constants(inter, space, probe_count=4096, seed=0, prefer_exact=True):
    """Closed-form constants when the interaction carries them, else sampled."""
    if prefer_exact and inter.constants is not None:
        return inter.constants
    return compute_constants(inter, space, probe_count, seed)


def derivative_errors(inter, space, n_probes=128, seed=0):
    """Largest relative mismatch of F_grad / F_hess against central differences.

    Returns ``(grad_err, hess_err, hess_asym)`` where ``hess_asym`` is the
    largest ``|H - H^T|`` entry seen at the probes.
    """
    gm = inter.observables(space)
    probes = _probe_moments(gm, max(n_probes - gm.shape[0], 0), seed)[:n_probes]
    grad_err = hess_err = asym = 0.0
    l = inter.l
    for m in probes:
        h = FD_STEP * max(1.0, float(np.max(np.abs(m))))
        g = np.asarray(inter.F_grad(m), dtype=float)
        H = np.asarray(inter.F_hess(m), dtype=float)
        fd_g = np.empty(l)
        fd_H = np.empty((l, l))
        for j in range(l):
            e = np.zeros(l)
            e[j] = h
            fd_g[j] = (inter.F(m + e) - inter.F(m - e)) / (2 * h)
            fd_H[:, j] = (np.asarray(inter.F_grad(m + e)) - np.asarray(inter.F_grad(m - e))) / (2 * h)
        scale_g = max(1.0, float(np.max(np.abs(g))))
        scale_H = max(1.0, float(np.max(np.abs(H))))
        grad_err = max(grad_err, float(np.max(np.abs(fd_g - g))) / scale_g)
        hess_err = max(hess_err, float(np.max(np.abs(fd_H - H))) / scale_H)
        asym = max(asym, float(np.max(np.abs(H - H.T))))
    return grad_err, hess_err, asym


def homogeneity_error(inter, space, n_probes=64, seed=0):
    """Max relative deviation of ``F(t m) = t^p F(m)`` over sampled t and m in D_g."""
    p = inter.homogeneity_degree
    if p is None:
        raise InvalidParameter("interaction declares no homogeneity degree")
    rng = np.random.default_rng(seed)
    gm = inter.observables(space)
    err = 0.0
    for m in _probe_moments(gm, n_probes, seed):
        t = rng.uniform(0.0, 1.0) or 1.0
        lhs = inter.F(t * m)
        rhs = t**p * inter.F(m)
        err = max(err, abs(lhs - rhs) / max(1.0, abs(rhs)))
    return err


def quadratic_interaction(beta, l, name="curie-weiss", g=None):
    """``F(m) = -(beta/2) |m|^2`` with coordinate observables by default."""
    beta = float(beta)
    if g is None:
        def g(nodes):
            return np.asarray(nodes, dtype=float)[:, :l]
    return Interaction(
        l=l,
        g=g,
        F=lambda m: -0.5 * beta * float(np.dot(m, m)),
        F_grad=lambda m: -beta * np.asarray(m, dtype=float),
        F_hess=lambda m: -beta * np.eye(l),
        homogeneity_degree=2.0,
        name=name,
    )
