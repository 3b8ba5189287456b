"""Joint a-priori kernels ``k(s, eta)`` linking an initial and a transformed spin space.

A kernel is a density w.r.t. ``alpha x alpha'`` whose two marginal
integrals are identically one. Three families are provided: the spin-flip
transition density on {+1, -1}, heat kernels on the circle and the 2-sphere,
and deterministic coarse-graining onto partition labels.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import legval

from .errors import (
    EmptyPartitionClass,
    InvalidParameter,
    MarginalViolation,
    TruncationInsufficient,
)
from .spinspace import SpinSpace, make_ising_space, make_label_space

log = logging.getLogger(__name__)

MARGINAL_TOL = 1e-8
T_MIN = 0.005
L_MAX = 512
SERIES_TOL = 1e-14
CLAMP_FLOOR = 1e-12
# Entries below -NOISE_TOL are genuine truncation residue; values in
# [-NOISE_TOL, CLAMP_FLOOR) are numerical zeros of the series.
NOISE_TOL = 1e-13
MAX_CLAMPED_FRACTION = 0.01


@dataclass(frozen=True, eq=False)
class Kernel:
    """Density matrix ``density[i, j] = k(node_i of S, node_j of S')``."""

    space_s: SpinSpace
    space_sp: SpinSpace
    density: np.ndarray
    family_tag: str
    params: dict = field(default_factory=dict)
    unbounded_log: bool = False
    clamped_count: int = 0
    floored_count: int = 0

    def __post_init__(self):
        k = np.array(self.density, dtype=float)
        if k.shape != (self.space_s.size, self.space_sp.size):
            raise InvalidParameter(
                f"kernel shape {k.shape} does not match spaces "
                f"{self.space_s.size}x{self.space_sp.size}")
        if np.any(k < 0) or not np.all(np.isfinite(k)):
            raise InvalidParameter("kernel density must be finite and nonnegative")
        k.setflags(write=False)
        object.__setattr__(self, "density", k)

    def marginal_errors(self):
        """(max |sum_eta alpha'(eta) k(s, eta) - 1|, max |sum_s alpha(s) k(s, eta) - 1|)."""
        rows = self.density @ self.space_sp.weights
        cols = self.space_s.weights @ self.density
        return float(np.max(np.abs(rows - 1.0))), float(np.max(np.abs(cols - 1.0)))

    def validate(self, tol=MARGINAL_TOL):
        e_row, e_col = self.marginal_errors()
        if max(e_row, e_col) > tol:
            raise MarginalViolation(
                f"{self.family_tag} kernel violates marginal conditions: "
                f"row error {e_row:.3e}, column error {e_col:.3e} (tol {tol:g})")
        if not self.unbounded_log and np.min(self.density) <= 0:
            raise MarginalViolation(f"{self.family_tag} kernel has non-positive entries")
        return self

    @property
    def log_density(self):
        with np.errstate(divide="ignore"):
            return np.log(self.density)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        labels = self.space_sp.node_labels or tuple(str(j) for j in range(self.space_sp.size))
        writer.writerow(["sigma_index", *labels])
        for i, row in enumerate(self.density):
            writer.writerow([i, *map(repr, row.tolist())])
        return buf.getvalue()


def spin_flip_h(t):
    """``h_t = 0.5 log((1 - e^{-2t}) / (1 + e^{-2t}))`` computed in log space."""
    if t <= 0:
        raise InvalidParameter(f"t must be positive, got {t}")
    x = -2.0 * t
    return 0.5 * (np.log(-np.expm1(x)) - np.log1p(np.exp(x)))


def spin_flip_kernel(t, space=None):
    """Rate-one independent spin-flip kernel ``k = exp(s eta h_t) / cosh(h_t)``."""
    h = spin_flip_h(t)
    space = space or make_ising_space()
    s = space.nodes[:, 0]
    k = np.exp(np.outer(s, s) * h) / np.cosh(h)
    return Kernel(space, space, k, "spin-flip", {"t": float(t), "h_t": float(h)}).validate()


def _finish(space, raw, tag, params, check):
    clamped = int(np.sum(raw < -NOISE_TOL))
    floored = int(np.sum(raw < CLAMP_FLOOR))
    if clamped:
        log.warning("%s kernel: %d entries of negative truncation residue clamped", tag, clamped)
    if clamped > MAX_CLAMPED_FRACTION * raw.size:
        raise TruncationInsufficient(
            f"{tag} kernel: {clamped}/{raw.size} entries needed clamping (> 1%)")
    k = np.maximum(raw, CLAMP_FLOOR)
    kern = Kernel(space, space, k, tag, params, clamped_count=clamped, floored_count=floored)
    return kern.validate() if check else kern


def _series_order(t, term_bound):
    n = 0
    while term_bound(n) >= SERIES_TOL:
        n += 1
        if n > L_MAX:
            raise TruncationInsufficient(f"series at t={t} needs order > {L_MAX}")
    return n


def _check_t(t):
    if t < T_MIN:
        raise TruncationInsufficient(f"heat kernels require t >= {T_MIN}, got {t}")


def circle_heat_kernel(space, t, check=True):
    """Heat kernel on the circle w.r.t. the normalised uniform measure.

    ``k_t(theta) = 1 + 2 sum_{n>=1} exp(-n^2 t) cos(n theta)``, truncated once
    the term bound ``2 exp(-n^2 t)`` drops below 1e-14.
    """
    _check_t(t)
    order = _series_order(t, lambda n: 2.0 * np.exp(-n * n * t) if n else np.inf)
    ang = np.arctan2(space.nodes[:, 1], space.nodes[:, 0])
    theta = ang[:, None] - ang[None, :]
    n = np.arange(1, order)
    # Sum smallest terms first.
    raw = 1.0 + 2.0 * np.tensordot(np.cos(theta[..., None] * n[::-1]),
                                   np.exp(-(n[::-1] ** 2) * t), axes=1)
    return _finish(space, raw, "heat-circle", {"t": float(t), "order": int(order)}, check)


def sphere_heat_kernel(space, t, check=True):
    """Heat kernel on the 2-sphere w.r.t. the normalised surface measure.

    ``k_t(cos g) = sum_l (2l + 1) exp(-l(l+1) t) P_l(cos g)``, truncated once
    ``(2l + 1) exp(-l(l+1) t)`` drops below 1e-14.
    """
    _check_t(t)
    order = _series_order(t, lambda l: (2 * l + 1) * np.exp(-l * (l + 1) * t))
    ell = np.arange(order)
    coef = (2 * ell + 1) * np.exp(-ell * (ell + 1) * t)
    cosg = np.clip(space.nodes @ space.nodes.T, -1.0, 1.0)
    raw = legval(cosg, coef)
    return _finish(space, raw, "heat-sphere", {"t": float(t), "order": int(order)}, check)


def heat_kernel(space, t, check=True):
    if space.dim == 2:
        return circle_heat_kernel(space, t, check)
    if space.dim == 3:
        return sphere_heat_kernel(space, t, check)
    raise InvalidParameter(f"no grid heat kernel for embedding dimension {space.dim}")


def coarse_grain_kernel(space, partition):
    """Deterministic map of every node to its partition label.

    ``partition`` gives one label per node. The image space carries
    ``alpha'(eta) = alpha(S_eta)`` and ``k(s, eta) = 1{s in S_eta} / alpha(S_eta)``.
    """
    labels = list(partition)
    if len(labels) != space.size:
        raise InvalidParameter(f"partition has {len(labels)} entries for {space.size} nodes")
    classes = sorted(set(labels), key=_label_key)
    index = {c: j for j, c in enumerate(classes)}
    member = np.zeros((space.size, len(classes)))
    for i, c in enumerate(labels):
        member[i, index[c]] = 1.0
    mass = space.weights @ member
    if np.any(mass <= 0):
        empty = [classes[j] for j in np.flatnonzero(mass <= 0)]
        raise EmptyPartitionClass(f"partition classes with zero a-priori mass: {empty}")
    image = make_label_space(classes, mass, label=f"{space.label}/partition")
    k = member / mass[None, :]
    kern = Kernel(space, image, k, "coarse", {"classes": len(classes)}, unbounded_log=True)
    return kern.validate()


def _label_key(x):
    try:
        return (0, float(x), str(x))
    except (TypeError, ValueError):
        return (1, 0.0, str(x))


def arc_partition(space, n_arcs):
    """Label circle nodes by which of ``n_arcs`` equal arcs (from angle 0) they fall in."""
    ang = np.mod(np.arctan2(space.nodes[:, 1], space.nodes[:, 0]), 2 * np.pi)
    # Nudge so nodes exactly on a boundary land in the arc they start.
    return [int(a) for a in np.floor(ang / (2 * np.pi) * n_arcs + 1e-9) % n_arcs]


def read_partition_csv(path):
    """Read ``node_index,label`` rows (header optional) into a per-node label list."""
    rows = {}
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].startswith("#"):
                continue
            if rec[0].strip() == "node_index":
                continue
            rows[int(rec[0])] = rec[1].strip()
    n = max(rows) + 1 if rows else 0
    missing = [i for i in range(n) if i not in rows]
    if missing:
        raise InvalidParameter(f"partition file lacks nodes {missing[:5]}")
    return [rows[i] for i in range(n)]


def _spread(weights, dist2):
    # weights: (n_sigma, n_cols); returns min over candidate centres a of
    # sqrt(sum_sigma weights * d^2(sigma, a)), one value per column.
    return np.sqrt(np.maximum(np.min(dist2.T @ weights, axis=0), 0.0))


def rho_alpha_k(kernel):
    """Worst-case posterior spread ``sup_eta inf_a (int d^2(s, a) k(s, eta) alpha(ds))^{1/2}``.

    The infimum runs over grid nodes of the initial space.
    """
    s = kernel.space_s
    post = s.weights[:, None] * kernel.density
    return float(np.max(_spread(post, s.metric**2)))


def rho_alpha(space):
    """Metric standard deviation of the a-priori measure."""
    return float(_spread(space.weights[:, None], space.metric**2)[0])


def compose(k1, k2):
    """Chapman-Kolmogorov composition through the intermediate a-priori measure."""
    mid = k1.space_sp
    return (k1.density * mid.weights[None, :]) @ k2.density
