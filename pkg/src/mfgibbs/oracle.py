"""Independent ground truth for the Ising presets.

* Exact finite-N conditional probabilities of the transformed spin at site 1,
  summed over magnetisation sectors instead of configurations.
* Brute-force enumeration of the same quantity for small N.
* One-dimensional grid minimisation of the Hubbard-Stratonovich potential
  ``psi_tau``.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import expit, gammaln, logsumexp

from .cflm import TIE_TOL
from .errors import InvalidParameter, NonUniqueMinimizer, ResourceLimit
from .gibbs import gamma1_prime
from .kernels import spin_flip_h
from .models import ising_pspin
from .spinspace import tau_measure

N_MAX = 20000
BRUTE_MAX = 20
GOLDEN_TOL = 1e-12
CHUNK = 2048


@dataclass(frozen=True)
class FiniteNSpec:
    """Finite-volume conditioning: ``n_plus`` of the transformed spins at sites 2..N are +1."""

    N: int
    beta: float
    p: int
    t: float
    n_plus: int

    def __post_init__(self):
        if self.N < 2:
            raise InvalidParameter(f"N must be >= 2, got {self.N}")
        if not 0 <= self.n_plus <= self.N - 1:
            raise InvalidParameter(f"n_plus must lie in [0, {self.N - 1}], got {self.n_plus}")
        if self.beta < 0 or self.t <= 0:
            raise InvalidParameter("need beta >= 0 and t > 0")

    @property
    def tau(self):
        return (2 * self.n_plus - (self.N - 1)) / (self.N - 1)

    @property
    def n_minus(self):
        return self.N - 1 - self.n_plus


def _log_binom(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def _log_weight(spec, eta1):
    """log of the unnormalised joint weight of ``eta_1`` summed over all sigma."""
    N, beta, p = spec.N, spec.beta, spec.p
    h = spin_flip_h(spec.t)
    npl, nmi = spec.n_plus, spec.n_minus
    b = np.arange(nmi + 1)
    lb = _log_binom(nmi, b) - h * (2 * b - nmi)
    parts = []
    for s1 in (1, -1):
        for start in range(0, npl + 1, CHUNK):
            a = np.arange(start, min(npl + 1, start + CHUNK))
            la = _log_binom(npl, a) + h * (2 * a - npl)
            up = a[:, None] + b[None, :] + (s1 == 1)
            m = (2.0 * up - N) / N
            energy = N * beta * m**p / p
            parts.append(logsumexp(la[:, None] + lb[None, :] + energy) + s1 * eta1 * h)
    return logsumexp(parts)


def ising_exact_conditional(spec, complement=False):
    """Finite-N probability that ``eta_1 = +1`` given the other transformed spins.

    Sums over sectors ``(a, b)`` = number of up initial spins among the
    sites with ``eta = +1`` and ``eta = -1``; O(N^2) work in log space.
    With ``complement=True`` the probability of ``eta_1 = -1`` is returned.
    """
    if spec.N > N_MAX:
        raise ResourceLimit(f"N = {spec.N} exceeds the oracle limit {N_MAX}")
    wp, wm = _log_weight(spec, 1), _log_weight(spec, -1)
    return float(expit(wm - wp)) if complement else float(expit(wp - wm))


def ising_brute_force(spec):
    """The same probability by enumerating all ``2^N`` initial configurations."""
    if spec.N > BRUTE_MAX:
        raise ResourceLimit(f"brute force limited to N <= {BRUTE_MAX}")
    h = spin_flip_h(spec.t)
    eta_rest = np.array([1] * spec.n_plus + [-1] * spec.n_minus)
    sig = np.array(list(itertools.product((1, -1), repeat=spec.N)), dtype=float)
    m = sig.mean(axis=1)
    base = spec.N * spec.beta * m**spec.p / spec.p + h * (sig[:, 1:] @ eta_rest)
    wp = logsumexp(base + h * sig[:, 0])
    wm = logsumexp(base - h * sig[:, 0])
    return float(expit(wp - wm))


# -- convergence to the limiting kernel -------------------------------------------------


@dataclass
class ConvergenceRow:
    N: int
    tau_realized: float
    exact: float
    limit: float
    error: float
    ratio: float = float("nan")


@dataclass
class ConvergenceStudy:
    rows: list
    tau_target: float

    @property
    def errors(self):
        return np.array([r.error for r in self.rows])

    def slope(self):
        """Decay exponent: minus the least-squares slope of log e_N against log N."""
        n = np.log([r.N for r in self.rows])
        e = np.log(self.errors)
        return float(-np.polyfit(n, e, 1)[0])


def realized_tau(N, tau):
    n_plus = int(round((1.0 + tau) * (N - 1) / 2.0))
    n_plus = min(max(n_plus, 0), N - 1)
    return n_plus, (2 * n_plus - (N - 1)) / (N - 1)


def convergence_study(beta, p, t, tau, N_list, search=None, workers=1):
    """Error of the finite-N conditional against the limiting kernel, for each N.

    The limit is evaluated at the realised ``tau_N`` so the rounding of
    ``tau`` onto the finite lattice does not bias the comparison.
    """
    preset = ising_pspin(beta, p, t)
    model = preset.model()
    space = model.kernel.space_sp
    plus = int(np.flatnonzero(space.nodes[:, 0] > 0)[0])

    def row(N):
        n_plus, tau_n = realized_tau(N, tau)
        spec = FiniteNSpec(N, beta, p, t, n_plus)
        try:
            limit = gamma1_prime(model, tau_measure(space, tau_n), search)
        except NonUniqueMinimizer as exc:
            raise NonUniqueMinimizer(
                f"limit kernel undefined at tau={tau_n:.6g} (beta={beta}, t={t}); "
                "convergence study needs a unique minimiser", exc.clusters) from exc
        lim = float(limit.weights[plus])
        exact = ising_exact_conditional(spec)
        return ConvergenceRow(N, tau_n, exact, lim, abs(exact - lim))

    N_list = list(N_list)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(row, N_list))
    else:
        rows = [row(N) for N in N_list]
    by_n = {r.N: r for r in rows}
    for r in rows:
        nxt = by_n.get(2 * r.N)
        if nxt is not None and nxt.error > 0:
            r.ratio = r.error / nxt.error
    return ConvergenceStudy(rows, tau)


# -- grid minimisation of psi_tau --------------------------------------------------------


@dataclass
class GridMinimum:
    minimizers: list
    psi_values: list
    degenerate: bool = False


def grid_minimize_psi_tau(beta, p, t, tau, grid_n=2001, tie_tol=TIE_TOL):
    """Global minimisers of ``psi_tau(., tau)`` over [-1, 1].

    Every discrete local minimum of a uniform grid is refined by golden-section
    search to 1e-12 and then polished on the stationarity equation. At
    ``beta = 0`` the potential is flat in m'; the consistent value
    ``tau tanh(h_t)`` is returned with ``degenerate=True``.
    """
    if grid_n < 1001:
        raise InvalidParameter(f"grid_n must be >= 1001, got {grid_n}")
    if not -1 <= tau <= 1:
        raise InvalidParameter(f"tau must lie in [-1, 1], got {tau}")
    preset = ising_pspin(beta, p, t)
    psi_tau = preset.closed_forms["psi_tau"]
    if beta == 0:
        m0 = float(tau * math.tanh(spin_flip_h(t)))
        return GridMinimum([m0], [float(psi_tau(m0, tau))], degenerate=True)
    stat = preset.closed_forms["stationarity_residual"]

    def f(m):
        return float(psi_tau(m, tau))

    grid = np.linspace(-1.0, 1.0, grid_n)
    vals = psi_tau(grid, tau)
    dx = grid[1] - grid[0]
    cands = []
    for i in range(grid_n):
        left = vals[i - 1] if i > 0 else np.inf
        right = vals[i + 1] if i < grid_n - 1 else np.inf
        if vals[i] <= left and vals[i] <= right:
            m = float(grid[i])
            if 0 < i < grid_n - 1:
                res = minimize_scalar(f, bracket=(grid[i - 1], m, grid[i + 1]),
                                      method="golden", tol=GOLDEN_TOL)
                m = float(res.x)
            m = _polish(stat, tau, m, dx)
            cands.append((f(m), m))
    best = min(v for v, _ in cands)
    mins = []
    for v, m in sorted(cands, key=lambda c: c[1]):
        if v - best < tie_tol and not any(abs(m - x) < 1e-9 for x in mins):
            mins.append(m)
    return GridMinimum(mins, [f(m) for m in mins])


def _polish(stat, tau, m, dx):
    # Root of the stationarity relation near the golden-section estimate; the
    # potential is flat to second order there, which caps golden-section at
    # roughly sqrt(machine epsilon) in m.
    lo, hi = max(m - dx, -1.0), min(m + dx, 1.0)
    a, b = float(stat(lo, tau)), float(stat(hi, tau))
    if a * b < 0:
        return float(brentq(lambda x: float(stat(x, tau)), lo, hi, xtol=1e-15))
    return m
