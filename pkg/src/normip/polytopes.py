"""Origin-symmetric polytope geometry: gauge norms, dual polytopes, slack
matrices, convex decomposition over vertices, and the vertex-sampling
protocol for gauge-normed inner products.

Conventions
-----------
H-representations store one row per symmetric inequality pair, i.e. a matrix
``A`` of shape (M, n) describing ``P = {x : -1 <= <A_i, x> <= 1}``.  General
right-hand sides must be rescaled into ``A`` at load time.
V-representations list every vertex, so they contain both ``v`` and ``-v``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.spatial import ConvexHull, QhullError

from .vectors import as_vector

__all__ = [
    "Polytope",
    "gauge_norm",
    "dual_polytope",
    "slack_matrix",
    "convex_decompose",
    "vertices_from_hrep",
    "hrep_from_vertices",
    "cube",
    "cross_polytope",
    "vertex_sampling_protocol",
    "slack_in_expectation",
    "polytope_to_json",
    "polytope_from_json",
]

VERTEX_ENUM_MAX_DIM = 8
VERTEX_CAP = 2_000_000

FW_TOL = 1e-10
FW_MAX_ITER = 100_000


class RepresentationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Polytope:
    """Origin-symmetric polytope with optional H- and/or V-representation."""

    n: int
    hrep: np.ndarray | None = field(default=None, repr=False)
    vrep: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.hrep is None and self.vrep is None:
            raise RepresentationError("at least one representation is required")
        if self.hrep is not None:
            A = np.atleast_2d(np.asarray(self.hrep, dtype=np.float64))
            if A.shape[1] != self.n:
                raise RepresentationError("hrep column count != dimension")
            object.__setattr__(self, "hrep", A)
        if self.vrep is not None:
            V = np.atleast_2d(np.asarray(self.vrep, dtype=np.float64))
            if V.shape[1] != self.n:
                raise RepresentationError("vrep column count != dimension")
            object.__setattr__(self, "vrep", V)
            self._check_vrep_symmetry(V)
        if self.hrep is not None and self.vrep is not None:
            self._check_consistency()

    @staticmethod
    def _check_vrep_symmetry(V: np.ndarray) -> None:
        # every vertex must have its negation in the list
        for v in V:
            if np.min(np.max(np.abs(V + v), axis=1)) > 1e-9:
                raise RepresentationError("vrep is not origin-symmetric")

    def _check_consistency(self) -> None:
        prods = self.vrep @ self.hrep.T
        if np.max(np.abs(prods)) > 1 + 1e-9:
            raise RepresentationError("a vertex violates an inequality")
        rng = np.random.default_rng(0)
        rays = rng.standard_normal((16, self.n))
        gh = np.max(np.abs(rays @ self.hrep.T), axis=1)
        gv = np.array([_gauge_vrep(self.vrep, r) for r in rays])
        if np.max(np.abs(gh - gv)) > 1e-9 * max(1.0, np.max(gh)):
            raise RepresentationError("hrep and vrep induce different gauges")

    def with_vertices(self) -> "Polytope":
        """Return an equivalent polytope that carries a V-representation."""
        if self.vrep is not None:
            return self
        return Polytope(self.n, hrep=self.hrep, vrep=vertices_from_hrep(self.hrep))

    def num_vertices(self) -> int:
        return self.with_vertices().vrep.shape[0]


def cube(n: int) -> Polytope:
    """Unit ball of the max norm: hrep = identity, 2^n vertices."""
    A = np.eye(n)
    V = np.array(np.meshgrid(*([[-1.0, 1.0]] * n))).reshape(n, -1).T
    return Polytope(n, hrep=A, vrep=V)


def cross_polytope(n: int) -> Polytope:
    """Unit ball of the sum-of-magnitudes norm: vertices +-e_i."""
    V = np.vstack([np.eye(n), -np.eye(n)])
    A = np.array(np.meshgrid(*([[-1.0, 1.0]] * (n - 1)))).reshape(n - 1, -1).T if n > 1 else np.zeros((0, 0))
    if n == 1:
        A = np.array([[1.0]])
    else:
        A = np.hstack([np.ones((A.shape[0], 1)), A])
    return Polytope(n, hrep=A, vrep=V)


def _gauge_vrep(V: np.ndarray, x: np.ndarray) -> float:
    """Gauge of conv(V) at x via the atomic LP min sum(lam), V^T lam = x."""
    if np.allclose(x, 0.0):
        return 0.0
    res = scipy.optimize.linprog(
        c=np.ones(V.shape[0]),
        A_eq=V.T,
        b_eq=x,
        bounds=(0, None),
        method="highs",
    )
    if not res.success:
        raise RepresentationError("gauge is unbounded: point outside the polytope span")
    return float(res.fun)


def gauge_norm(P: Polytope, x: np.ndarray) -> float:
    """Minkowski gauge of P at x: the smallest t with x/t inside P."""
    x = as_vector(x)
    if x.size != P.n:
        raise ValueError("dimension mismatch")
    if P.hrep is not None:
        return float(np.max(np.abs(P.hrep @ x))) if P.hrep.size else 0.0
    return _gauge_vrep(P.vrep, x)


def dual_polytope(P: Polytope) -> Polytope:
    """Swap representations: inequality rows become vertex pairs and
    vertices become inequality rows.  Applying it twice is the identity."""
    hrep = None
    vrep = None
    if P.vrep is not None:
        # keep one row per symmetric pair
        hrep = _halve_symmetric(P.vrep)
    if P.hrep is not None:
        vrep = np.vstack([P.hrep, -P.hrep])
        vrep = _dedup_rows(vrep)
        vrep = _extreme_points_only(vrep)
    return Polytope(P.n, hrep=hrep, vrep=vrep)


def _dedup_rows(rows: np.ndarray, decimals: int = 12) -> np.ndarray:
    _, keep = np.unique(np.round(rows, decimals), axis=0, return_index=True)
    return rows[np.sort(keep)]

def _halve_symmetric(rows: np.ndarray) -> np.ndarray:
    """Keep one representative from each +-pair of rows."""
    rows = _dedup_rows(rows)
    kept = []
    seen = np.zeros(len(rows), dtype=bool)
    for i, r in enumerate(rows):
        if seen[i]:
            continue
        kept.append(r)
        d = np.max(np.abs(rows + r), axis=1)
        seen |= d <= 1e-12
        seen[i] = True
    return np.array(kept)


def _extreme_points_only(points: np.ndarray) -> np.ndarray:
    """Drop points that are not vertices of the convex hull."""
    n = points.shape[1]
    if n == 1:
        m = np.max(np.abs(points))
        return np.array([[m], [-m]])
    if len(points) <= n + 1:
        return points
    try:
        hull = ConvexHull(points)
    except QhullError:  # pragma: no cover - degenerate input
        return points
    return points[np.sort(hull.vertices)]


def vertices_from_hrep(A: np.ndarray, cap: int = VERTEX_CAP) -> np.ndarray:
    """Enumerate the vertices of {x : -1 <= <A_i,x> <= 1}.

    Uses the polar correspondence: vertices of the H-polytope are the
    facets of conv({+-A_i}).  Limited to dimension <= 8; larger instances
    must supply a V-representation directly.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    n = A.shape[1]
    if n > VERTEX_ENUM_MAX_DIM:
        raise RepresentationError(
            f"vertex enumeration supported only up to dimension {VERTEX_ENUM_MAX_DIM}"
        )
    pts = np.vstack([A, -A])
    if n == 1:
        m = np.max(np.abs(pts))
        if m <= 0:
            raise RepresentationError("degenerate hrep")
        return np.array([[1.0 / m], [-1.0 / m]])
    pts = _dedup_rows(pts)
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise RepresentationError(f"hrep rows do not span the space: {exc}") from exc
    eqs = _dedup_rows(hull.equations, decimals=9)
    normals, offsets = eqs[:, :n], eqs[:, n]
    if np.any(offsets >= -1e-12):
        raise RepresentationError("origin is not interior to the polar hull")
    verts = normals / (-offsets[:, None])
    if len(verts) > cap:
        raise RepresentationError(f"vertex count exceeds cap {cap}")
    return _dedup_rows(verts, decimals=9)


def hrep_from_vertices(V: np.ndarray) -> np.ndarray:
    """Facet description of conv(V): one row per symmetric facet pair."""
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    n = V.shape[1]
    if n == 1:
        m = np.max(np.abs(V))
        return np.array([[1.0 / m]])
    hull = ConvexHull(V)
    eqs = _dedup_rows(hull.equations, decimals=9)
    normals, offsets = eqs[:, :n], eqs[:, n]
    if np.any(offsets >= -1e-12):
        raise RepresentationError("origin is not interior to the hull")
    rows = normals / (-offsets[:, None])
    return _halve_symmetric(rows)


def slack_matrix(P: Polytope) -> np.ndarray:
    """Vertex-by-inequality matrix of slacks 1 - <A_i, v>, clamped at 0.

    Requires both representations; entries lie in [0, 2] for an
    origin-symmetric polytope under the unit right-hand-side convention.
    """
    if P.hrep is None or P.vrep is None:
        raise RepresentationError("slack matrix needs both hrep and vrep")
    S = 1.0 - P.vrep @ P.hrep.T
    if np.min(S) < -1e-9:
        raise RepresentationError("negative slack beyond tolerance: inconsistent reps")
    return np.clip(S, 0.0, None)


def convex_decompose(P: Polytope, v: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Express v inside P as a convex combination of its vertices.

    Returns weights ``lam`` over ``P.vrep`` rows with lam >= 0,
    sum(lam) = 1 and ||vrep^T lam - v|| <= tol.  Pairwise Frank-Wolfe on
    the squared distance, followed by Caratheodory pruning down to at
    most n+1 active vertices.
    """
    if P.vrep is None:
        raise RepresentationError("convex decomposition needs a V-representation")
    v = as_vector(v)
    U = P.vrep
    m = U.shape[0]

    g = gauge_norm(P, v) if P.hrep is not None else _gauge_vrep(U, v)
    if g > 1 + 1e-9:
        raise ValueError(f"point outside the polytope by margin {g - 1:.3e}")

    lam = np.zeros(m)
    start = int(np.argmax(U @ v)) if np.any(v) else 0
    lam[start] = 1.0
    x = U[start].copy()

    for _ in range(FW_MAX_ITER):
        grad = x - v
        if np.linalg.norm(grad, np.inf) <= FW_TOL and np.linalg.norm(x - v) <= FW_TOL:
            break
        scores = U @ grad
        fw = int(np.argmin(scores))
        active = np.flatnonzero(lam > 0)
        away = active[int(np.argmax(scores[active]))]
        gap = float(grad @ (x - U[fw]))
        if gap <= FW_TOL * FW_TOL:
            break
        d = U[fw] - U[away]
        dd = float(d @ d)
        if dd <= 0:
            break
        step = float(np.clip(-(grad @ d) / dd, 0.0, lam[away]))
        if step <= 0:
            break
        lam[fw] += step
        lam[away] -= step
        x = x + step * d

    lam = _caratheodory_prune(U, lam)
    x = U.T @ lam

    if np.linalg.norm(x - v) > tol:
        raise ValueError(
            f"decomposition residual {np.linalg.norm(x - v):.3e} above tolerance"
        )
    assert abs(lam.sum() - 1.0) <= 1e-9
    assert np.min(lam) >= -1e-12
    return np.clip(lam, 0.0, None)


def _caratheodory_prune(U: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Reduce the active set to at most n+1 vertices by affine eliminations."""
    n = U.shape[1]
    lam = lam.copy()
    while True:
        active = np.flatnonzero(lam > 1e-15)
        if len(active) <= n + 1:
            break
        # affine dependence: rows [U_active^T; 1] have a nontrivial kernel
        M = np.vstack([U[active].T, np.ones(len(active))])
        ns = scipy.linalg.null_space(M, rcond=1e-12)
        if ns.shape[1] == 0:
            break
        mu = ns[:, 0]
        pos = mu > 1e-15
        if not np.any(pos):
            mu = -mu
            pos = mu > 1e-15
        t = np.min(lam[active][pos] / mu[pos])
        lam[active] = np.clip(lam[active] - t * mu, 0.0, None)
    s = lam.sum()
    if s > 0:
        lam /= s
    return lam


def vertex_sampling_protocol(P: Polytope, v, w, eps: float, rng):
    """Estimate <v, w> for gauge-bounded v (and dual-gauge-bounded w) by
    sampling vertex names from a convex decomposition of v.

    Thin wrapper over the protocol engine; see
    :func:`normip.protocols.run_protocol`.
    """
    from . import protocols

    spec = protocols.VertexSample(polytope=P.with_vertices(), eps=eps)
    return protocols.run_protocol(spec, as_vector(v), as_vector(w), rng)


def slack_in_expectation(P: Polytope, vertex_index: int, ineq_index: int,
                         eps: float, rng) -> float:
    """Randomized estimate of one slack-matrix entry.

    Runs the vertex-sampling inner-product protocol on (vertex, A_i) a
    median-amplified number of times and returns clamp(1 - median, 0, 2).
    The estimator mean is within 2*eps of the true entry.
    """
    P = P.with_vertices()
    if P.hrep is None:
        raise RepresentationError("slack estimation needs an H-representation")
    v = P.vrep[vertex_index]
    a = P.hrep[ineq_index]
    reps = max(1, int(np.ceil(4 * np.log2(1.0 / eps))))
    estimates = [
        vertex_sampling_protocol(P, v, a, eps, rng).estimate for _ in range(reps)
    ]
    m = float(np.median(estimates))
    return float(np.clip(1.0 - m, 0.0, 2.0))


def polytope_to_json(P: Polytope) -> dict:
    doc: dict = {"n": P.n}
    doc["hrep"] = P.hrep.tolist() if P.hrep is not None else None
    doc["vrep"] = P.vrep.tolist() if P.vrep is not None else None
    return doc


def polytope_from_json(doc: dict | str) -> Polytope:
    if isinstance(doc, str):
        doc = json.loads(doc)
    hrep = np.array(doc["hrep"]) if doc.get("hrep") is not None else None
    vrep = np.array(doc["vrep"]) if doc.get("vrep") is not None else None
    return Polytope(int(doc["n"]), hrep=hrep, vrep=vrep)
