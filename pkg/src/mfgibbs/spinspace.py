"""Single-site spin spaces, probability measures on them, and their distances.

Continuous spaces (circle, sphere) are represented by deterministic quadrature
grids, so every integral over a spin space becomes a weighted sum over nodes.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import InsufficientResolution, InvalidParameter, SpaceMismatch

WEIGHT_TOL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _chordal(nodes):
    diff = nodes[:, None, :] - nodes[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


@dataclass(frozen=True, eq=False)
class SpinSpace:
    """Finite node set with a-priori weights and a metric.

    Attributes
    ----------
    nodes : ndarray, shape (n, d)
        Coordinates of the nodes (embedding coordinates for manifolds).
    weights : ndarray, shape (n,)
        A-priori weights, renormalised to sum to one.
    metric : ndarray, shape (n, n)
        Symmetric distance matrix with zero diagonal.
    label : str
        Identifier used in reports and serialisation.
    metric_kind : str
        ``"chordal"`` when the metric is the Euclidean distance between
        node coordinates, ``"explicit"`` otherwise.
    weight_correction : float
        ``|1 - sum(raw weights)|`` removed at construction.
    """

    nodes: np.ndarray
    weights: np.ndarray
    metric: np.ndarray
    label: str = "space"
    metric_kind: str = "explicit"
    node_labels: tuple | None = None
    weight_correction: float = 0.0

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        n = nodes.shape[0]
        if n < 1:
            raise InvalidParameter("a spin space needs at least one node")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (n,):
            raise InvalidParameter(f"expected {n} weights, got shape {w.shape}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidParameter("a-priori weights must be finite and nonnegative")
        total = w.sum()
        if total <= 0:
            raise InvalidParameter("a-priori weights have zero mass")
        d = np.asarray(self.metric, dtype=float)
        if d.shape != (n, n):
            raise InvalidParameter(f"metric must be {n}x{n}")
        if np.any(np.diag(d) != 0) or not np.allclose(d, d.T, rtol=0, atol=1e-12):
            raise InvalidParameter("metric must be symmetric with zero diagonal")
        if n > 1 and np.min(d[~np.eye(n, dtype=bool)]) <= 0:
            raise InvalidParameter("metric must separate distinct nodes")
        object.__setattr__(self, "nodes", _frozen(nodes))
        object.__setattr__(self, "weights", _frozen(w / total))
        object.__setattr__(self, "metric", _frozen(0.5 * (d + d.T)))
        object.__setattr__(self, "weight_correction", float(abs(1.0 - total)))

    @property
    def size(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.nodes.shape[1]

    @property
    def apriori(self):
        return Measure(self, self.weights)

    @classmethod
    def from_points(cls, nodes, weights, label="space", node_labels=None):
        """Space with the chordal (Euclidean embedding) metric."""
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        return cls(nodes, weights, _chordal(nodes), label=label,
                   metric_kind="chordal", node_labels=node_labels)

    def to_dict(self):
        out = {
            "label": self.label,
            "nodes": self.nodes.tolist(),
            "weights": self.weights.tolist(),
            "metric": "chordal" if self.metric_kind == "chordal" else self.metric.tolist(),
        }
        if self.node_labels is not None:
            out["node_labels"] = list(self.node_labels)
        return out

    @classmethod
    def from_dict(cls, data):
        nodes = np.asarray(data["nodes"], dtype=float)
        labels = tuple(data["node_labels"]) if "node_labels" in data else None
        if data["metric"] == "chordal":
            return cls.from_points(nodes, data["weights"], data["label"], labels)
        return cls(nodes, data["weights"], data["metric"], label=data["label"],
                   node_labels=labels)


@dataclass(frozen=True, eq=False)
class Measure:
    """Probability weights over the nodes of a :class:`SpinSpace`."""

    space: SpinSpace
    weights: np.ndarray
    correction: float = field(default=0.0)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.space.size,):
            raise InvalidParameter(
                f"measure has {w.shape} weights, space has {self.space.size} nodes")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidParameter("measure weights must be finite and nonnegative")
        total = w.sum()
        if total <= 0:
            raise InvalidParameter("measure has zero mass")
        object.__setattr__(self, "weights", _frozen(w / total))
        object.__setattr__(self, "correction", float(abs(1.0 - total)))

    def to_dict(self):
        return {"space": self.space.label, "weights": self.weights.tolist()}

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        coords = [f"x{j}" for j in range(self.space.dim)]
        writer.writerow(["node_index", *coords, "weight"])
        for i in range(self.space.size):
            writer.writerow([i, *map(repr, self.space.nodes[i].tolist()),
                             repr(float(self.weights[i]))])
        return buf.getvalue()


def _check_same(a, b):
    if a.space is not b.space and not (
        a.space.size == b.space.size and np.array_equal(a.space.nodes, b.space.nodes)
    ):
        raise SpaceMismatch(f"measures live on {a.space.label!r} and {b.space.label!r}")


def variational_distance(a, b):
    """Half the l1 distance, ``(a - b)^+(S)``; lies in [0, 1]."""
    _check_same(a, b)
    return 0.5 * float(np.abs(a.weights - b.weights).sum())


def relative_entropy(nu, rho):
    """``S(nu | rho)``; ``inf`` when nu charges a node where rho vanishes."""
    _check_same(nu, rho)
    p, q = nu.weights, rho.weights
    support = p > 0
    if np.any(q[support] == 0):
        return float("inf")
    val = float(np.sum(p[support] * np.log(p[support] / q[support])))
    return max(val, 0.0)


def moment_vector(nu, g):
    """``nu[g]`` for an observable matrix ``g`` of shape (n_nodes, l) or a callable."""
    gm = g(nu.space.nodes) if callable(g) else np.asarray(g, dtype=float)
    if gm.ndim == 1:
        gm = gm[:, None]
    return nu.weights @ gm


def make_circle(n_nodes):
    """Equally spaced points on the unit circle with uniform weights."""
    if n_nodes < 8:
        raise InsufficientResolution(f"circle needs at least 8 nodes, got {n_nodes}")
    theta = 2.0 * np.pi * np.arange(n_nodes) / n_nodes
    nodes = np.column_stack([np.cos(theta), np.sin(theta)])
    return SpinSpace.from_points(nodes, np.full(n_nodes, 1.0 / n_nodes),
                                 label=f"circle[{n_nodes}]")


def make_sphere(n_polar, n_azimuth):
    """Gauss-Legendre (polar cosine) x uniform (azimuth) grid on the 2-sphere."""
    if n_polar < 4 or n_azimuth < 4:
        raise InsufficientResolution(
            f"sphere needs n_polar, n_azimuth >= 4, got {n_polar}x{n_azimuth}")
    u, wu = leggauss(n_polar)
    phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
    uu, pp = np.meshgrid(u, phi, indexing="ij")
    s = np.sqrt(1.0 - uu**2)
    nodes = np.stack([s * np.cos(pp), s * np.sin(pp), uu], axis=-1).reshape(-1, 3)
    weights = np.outer(wu / 2.0, np.full(n_azimuth, 1.0 / n_azimuth)).ravel()
    return SpinSpace.from_points(nodes, weights, label=f"sphere[{n_polar}x{n_azimuth}]")


def make_ising_space():
    """{+1, -1} with uniform weights and the metric |s - s'|."""
    nodes = np.array([[1.0], [-1.0]])
    return SpinSpace(nodes, [0.5, 0.5], [[0.0, 2.0], [2.0, 0.0]], label="ising",
                     metric_kind="explicit", node_labels=("+1", "-1"))


def make_label_space(labels, weights, label="labels"):
    """Finite label set with the discrete metric (used as a coarse-grained image)."""
    n = len(labels)
    metric = 1.0 - np.eye(n)
    return SpinSpace(np.arange(n, dtype=float)[:, None], weights, metric, label=label,
                     node_labels=tuple(str(x) for x in labels))


def tau_measure(space, tau):
    """Measure on the Ising space with mean ``tau``: weight (1 + tau)/2 on +1."""
    if not -1.0 <= tau <= 1.0:
        raise InvalidParameter(f"tau must lie in [-1, 1], got {tau}")
    return Measure(space, [(1.0 + tau) / 2.0, (1.0 - tau) / 2.0])


def random_measure(space, rng, spread=2.0):
    """Strictly positive random measure, density exp(U[-spread, spread]) w.r.t. counting."""
    return Measure(space, np.exp(rng.uniform(-spread, spread, space.size)))


def dumps_space(space):
    return json.dumps(space.to_dict(), sort_keys=True)
