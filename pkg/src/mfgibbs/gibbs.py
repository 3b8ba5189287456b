"""Contraction certificates, the limiting transformed kernel and the bad-point scanner.

Gibbsianness is reported at two tiers. A *certified* model has contraction
constant ``L < 1``, which guarantees a unique consistent measure for every
``nu'``. An *empirically unique* scan point is one where multistart found a
single Psi-minimal cluster; that is numerical evidence, not a theorem.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .cflm import (
    CLUSTER_TOL,
    N_STARTS,
    TIE_TOL,
    TOL,
    multistart,
)
from .errors import InvalidParameter, NoConsistentMeasure, NonUniqueMinimizer
from .kernels import rho_alpha, rho_alpha_k
from .spinspace import Measure, variational_distance

JUMP_FACTOR = 10.0


@dataclass(frozen=True)
class Certificate:
    L: float
    L_hat: float
    L1: float
    L1_bar: float
    L2: float
    L2_bar: float
    certified_gibbs: bool
    constants_provenance: str
    model_descriptor: str

    def to_dict(self):
        out = asdict(self)
        for key in ("L1_bar", "L2_bar"):
            if math.isinf(out[key]):
                out[key] = "inf"
        return out


def assemble_certificate(c_of_F_g, rho_k, rho_a, provenance="sampled", descriptor=""):
    L = c_of_F_g * rho_k
    L_hat = c_of_F_g * rho_a
    L1 = 4.0 * L
    contracting = L < 1.0
    return Certificate(
        L=L,
        L_hat=L_hat,
        L1=L1,
        L1_bar=L1 / (1.0 - L) if contracting else math.inf,
        L2=L1 * L_hat,
        L2_bar=4.0 * L * L_hat / (1.0 - L) if contracting else math.inf,
        certified_gibbs=contracting,
        constants_provenance=provenance,
        model_descriptor=descriptor,
    )


def certify(model, constants=None, kernel=None):
    """Contraction constants ``L = C(F, g) rho_alpha(k)`` and their derived bounds."""
    constants = constants or model.constants
    kernel = kernel or model.kernel
    descriptor = f"{model.interaction.name} / {kernel.family_tag} {kernel.params}"
    return assemble_certificate(constants.c_of_F_g, rho_alpha_k(kernel),
                                rho_alpha(kernel.space_s), constants.provenance, descriptor)


def _search(search):
    out = {"n_starts": N_STARTS, "seed": 0, "cluster_tol": CLUSTER_TOL, "tol": TOL}
    out.update(search or {})
    return out


def limit_kernel(model, state):
    """``gamma'_1(eta | nu')`` for the consistent state ``state`` as a Measure on S'."""
    m = model.moments(state.first_marginal(model.alpha))
    fld = model.field(m)
    logw = -fld + model.log_alpha
    w = np.exp(logw - logw.max())
    num = w @ model.kernel.density
    dens = num / w.sum()
    return Measure(model.kernel.space_sp, model.kernel.space_sp.weights * dens)


def gamma1_prime(model, nu_prime, search=None, tie_tol=TIE_TOL, return_clusters=False):
    """Limiting single-site kernel of the transformed system at ``nu_prime``.

    Raises :class:`NonUniqueMinimizer` when two or more clusters tie for the
    minimal Psi (a bad configuration) and :class:`NoConsistentMeasure` when no
    run converged.
    """
    res = multistart(model, nu_prime, **_search(search))
    if not res.clusters:
        raise NoConsistentMeasure("no fixed-point run converged")
    best = res.psi_minimal(tie_tol)
    if len(best) > 1:
        raise NonUniqueMinimizer(
            f"{len(best)} clusters tie for minimal Psi within {tie_tol:g}", best)
    out = limit_kernel(model, best[0].state)
    return (out, res) if return_clusters else out


def _joint_distance(model, s1, s2):
    return 0.5 * float(np.abs(s1.joint(model.alpha) - s2.joint(model.alpha)).sum())


@dataclass
class ContinuityReport:
    gamma_ratios: list
    fixed_point_ratios: list
    L1: float
    L2: float

    @property
    def max_gamma_ratio(self):
        return max(self.gamma_ratios, default=0.0)

    @property
    def max_fixed_point_ratio(self):
        return max(self.fixed_point_ratios, default=0.0)

    def within_bounds(self, slack=1e-8):
        return (self.max_gamma_ratio <= self.L2 + slack
                and self.max_fixed_point_ratio <= self.L1 + slack)


def continuity_check(model, nu_prime_pairs, search=None, certificate=None):
    """Empirical Lipschitz ratios of ``nu' -> gamma'_1`` and ``nu' -> consistent state``."""
    cert = certificate or certify(model)
    if not cert.certified_gibbs:
        raise InvalidParameter(f"continuity estimates need L < 1, got L = {cert.L:.4g}")
    g_ratios, f_ratios = [], []
    for a, b in nu_prime_pairs:
        dist = variational_distance(a, b)
        if dist == 0:
            raise InvalidParameter("continuity pairs must differ")
        ga, ra = gamma1_prime(model, a, search, return_clusters=True)
        gb, rb = gamma1_prime(model, b, search, return_clusters=True)
        g_ratios.append(variational_distance(ga, gb) / dist)
        f_ratios.append(_joint_distance(model, ra.clusters[0].state, rb.clusters[0].state) / dist)
    return ContinuityReport(g_ratios, f_ratios, cert.L1, cert.L2)


@dataclass
class ScanRow:
    index: int
    nu_prime: Measure
    cluster_count: int
    psi_gap: float
    bad: bool
    gamma: Measure | None
    jump_to_next: float = float("nan")
    suspect: bool = False
    lower_confidence: bool = False
    failed_runs: int = 0


@dataclass
class ScanResult:
    rows: list
    certificate: Certificate

    @property
    def bad_indices(self):
        return [r.index for r in self.rows if r.bad]

    @property
    def search_incomplete(self):
        return any(r.lower_confidence for r in self.rows)


def _scan_point(model, i, nu, search, tie_tol, uncertified):
    params = _search(search)
    params["seed"] = params["seed"] + i
    res = multistart(model, nu, **params)
    best = res.psi_minimal(tie_tol)
    bad = len(best) > 1
    gamma = limit_kernel(model, best[0].state) if best and not bad else None
    return ScanRow(
        index=i,
        nu_prime=nu,
        cluster_count=len(res.clusters),
        psi_gap=res.psi_gap,
        bad=bad,
        gamma=gamma,
        lower_confidence=uncertified and len(res.clusters) == 1,
        failed_runs=res.failed,
    )


def bad_point_scan(model, nu_prime_grid, search=None, tie_tol=TIE_TOL,
                   jump_factor=JUMP_FACTOR, workers=1):
    """Scan an ordered family of conditioning measures for bad configurations.

    A point is BAD when two or more clusters tie for minimal Psi. The jump
    indicator is the variational distance of gamma'_1 to the next point
    where it is defined; jumps above ``jump_factor * spacing * L2`` are
    flagged SUSPECT (a refinement heuristic, not a theorem).
    """
    cert = certify(model)
    uncertified = not cert.certified_gibbs
    grid = list(nu_prime_grid)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(
                lambda a: _scan_point(model, a[0], a[1], search, tie_tol, uncertified),
                enumerate(grid)))
    else:
        rows = [_scan_point(model, i, nu, search, tie_tol, uncertified)
                for i, nu in enumerate(grid)]
    for i, row in enumerate(rows):
        if row.gamma is None:
            continue
        nxt = next((r for r in rows[i + 1:] if r.gamma is not None), None)
        if nxt is None:
            continue
        row.jump_to_next = variational_distance(row.gamma, nxt.gamma)
        spacing = variational_distance(row.nu_prime, nxt.nu_prime)
        row.suspect = row.jump_to_next > jump_factor * spacing * cert.L2
    return ScanResult(rows, cert)
