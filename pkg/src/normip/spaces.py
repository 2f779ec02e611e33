"""Space algebra: structural duals, dual-vector decompositions for max
norms, the top-k inf-convolution split, embeddings, and lifting of dual
vectors across subspace embeddings.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from . import norms
from .norms import (
    DualOf, HSum, Lp, MaxOf, NormSpec, PolytopeGauge, Scaled, SymmetricOracle,
    TopK, dual_exponent, eval_norm, is_polyhedral, lp_norm, support_generators,
    topk_norm, topk_magnitude_threshold,
)
from .polytopes import dual_polytope
from .vectors import as_vector

__all__ = [
    "dual_spec", "eval_dual_of", "topk_decompose", "MaxDualSplit",
    "split_max_dual", "Embedding", "linf_into_lp_embedding",
    "lift_dual_vector", "audit_embedding", "check_disjoint_support_growth",
    "embedding_to_json", "embedding_from_json",
]


# ---------------------------------------------------------------------------
# duals
# ---------------------------------------------------------------------------

def dual_spec(spec: NormSpec) -> NormSpec:
    """Structural dual of a norm spec.

    Closed-form rewrites where they exist; the dual of a MaxOf stays
    symbolic (a DualOf wrapper) and is evaluated by inf-convolution.
    """
    if isinstance(spec, Lp):
        return Lp(dual_exponent(spec.p))
    if isinstance(spec, TopK):
        return MaxOf(Lp(math.inf), Scaled(Lp(1), 1.0 / spec.k))
    if isinstance(spec, Scaled):
        return Scaled(dual_spec(spec.inner), 1.0 / spec.c)
    if isinstance(spec, HSum):
        return HSum(
            h=dual_spec(spec.h),
            parts=tuple(dual_spec(p) for p in spec.parts),
            dims=spec.dims,
        )
    if isinstance(spec, MaxOf):
        return DualOf(spec)
    if isinstance(spec, PolytopeGauge):
        return PolytopeGauge(dual_polytope(spec.poly))
    if isinstance(spec, DualOf):
        return spec.primal
    if isinstance(spec, SymmetricOracle):
        if spec.dual_fn is None:
            raise ValueError("oracle norm has no dual oracle attached")
        return SymmetricOracle(fn=spec.dual_fn, dim=spec.dim, dual_fn=spec.fn)
    raise TypeError(f"unknown spec {spec!r}")


def _match_topk_dual_shape(spec: MaxOf, n: int) -> int | None:
    """Recognize max(linf, l1/k): returns the effective k, else None."""
    def split(a, b):
        if isinstance(a, Lp) and math.isinf(a.p):
            if isinstance(b, Lp) and b.p == 1:
                return 1.0
            if isinstance(b, Scaled) and isinstance(b.inner, Lp) and b.inner.p == 1:
                return 1.0 / b.c
        return None

    k = split(spec.a, spec.b)
    if k is None:
        k = split(spec.b, spec.a)
    if k is None:
        return None
    k_int = round(k)
    if abs(k - k_int) > 1e-9 or k_int < 1:
        return None
    return min(k_int, n)


def eval_dual_of(primal: NormSpec, w) -> float:
    """Norm of w in the dual of ``primal`` when no closed form exists.

    For max norms this is the inf-convolution of the two dual norms,
    i.e. the gauge of the convex hull of the union of the dual balls.
    """
    w = as_vector(w)
    n = w.size
    if isinstance(primal, MaxOf):
        k = _match_topk_dual_shape(primal, n)
        if k is not None:
            return topk_norm(w, k)
        if is_polyhedral(primal):
            return _atoms_gauge(support_generators(primal, n), w)
        return _inf_convolution_descent(primal.a, primal.b, w)[0]
    res = norms.dual_norm_bruteforce(primal, w)
    return res.value


def _atoms_gauge(atoms: np.ndarray, w: np.ndarray) -> float:
    """Gauge of conv(atoms) at w via the conic LP min sum(lam)."""
    if not np.any(w):
        return 0.0
    res = scipy.optimize.linprog(
        c=np.ones(len(atoms)), A_eq=atoms.T, b_eq=w, bounds=(0, None), method="highs"
    )
    if not res.success:
        raise ValueError("atoms do not span the vector: gauge undefined")
    return float(res.fun)


def _inf_convolution_descent(a: NormSpec, b: NormSpec, w: np.ndarray,
                             iters: int = 4000, restarts: int = 3):
    """Best-effort minimization of ||w1||_a* + ||w - w1||_b*.

    Returns (value, w1).  Used only for non-polyhedral max norms; the value
    is a valid upper bound on the inf-convolution at every iterate.
    """
    da, db = dual_spec(a), dual_spec(b)

    def f(w1):
        return eval_norm(da, w1) + eval_norm(db, w - w1)

    best_val, best_w1 = math.inf, None
    rng = np.random.default_rng(0xD15C0)
    for r in range(restarts):
        w1 = w * (0.5 if r == 0 else rng.uniform(0, 1))
        val = f(w1)
        if val < best_val:
            best_val, best_w1 = val, w1.copy()
        for t in range(iters):
            g = norms.norm_subgradient(da, w1) - norms.norm_subgradient(db, w - w1)
            w1 = w1 - (0.5 * max(1.0, lp_norm(w, 2)) / (1 + t) ** 0.5) * g
            val = f(w1)
            if val < best_val:
                best_val, best_w1 = val, w1.copy()
    return best_val, best_w1


# ---------------------------------------------------------------------------
# decompositions
# ---------------------------------------------------------------------------

def topk_decompose(v, k: int):
    """Split v = a + b with ||a||_1 + k * ||b||_inf equal to the top-k norm.

    b clamps v to the k-th largest magnitude theta; a keeps the excess.
    This realizes the top-k norm as an inf-convolution of l1 and k*linf.
    """
    v = as_vector(v)
    if not 1 <= k <= v.size:
        raise ValueError(f"k must be in [1, {v.size}]")
    theta = topk_magnitude_threshold(v, k)
    b = np.clip(v, -theta, theta)
    a = v - b
    return a, b


@dataclass(frozen=True)
class MaxDualSplit:
    """Certified split of a dual vector across max(N1, N2)."""

    w1: np.ndarray = field(repr=False)
    w2: np.ndarray = field(repr=False)
    budget1: float = 0.0
    budget2: float = 0.0

    def validate(self, w: np.ndarray) -> None:
        if np.max(np.abs(self.w1 + self.w2 - w)) > 1e-12 * max(1.0, np.max(np.abs(w))):
            raise AssertionError("split does not re-sum to the input")
        if self.budget1 + self.budget2 > 1 + 1e-9:
            raise AssertionError("dual budgets exceed 1")


def split_max_dual(w, a: NormSpec, b: NormSpec, budget: int = 4000) -> MaxDualSplit:
    """Decompose w = w1 + w2 with ||w1||_a* + ||w2||_b* <= 1.

    Requires that w lies in the dual ball of max(a, b).  The top-k shape
    max(linf, l1/k) is handled exactly through the clamp decomposition;
    polyhedral pairs go through an exact conic program over dual-ball
    vertices; anything else falls back to subgradient search and raises
    with a diagnostic when no split within budget meets the tolerance.
    """
    w = as_vector(w)
    n = w.size
    if not np.any(w):
        z = np.zeros(n)
        return MaxDualSplit(w1=z, w2=z.copy(), budget1=0.0, budget2=0.0)

    spec = MaxOf(a, b)
    k = _match_topk_dual_shape(spec, n)
    if k is not None:
        spiky, clamped = topk_decompose(w, k)
        w1, w2 = _orient_split(spec, a, spiky, clamped)
        return _finalize_split(w, w1, w2, a, b)

    if is_polyhedral(a) and is_polyhedral(b):
        atoms_a = support_generators(a, n)
        atoms_b = support_generators(b, n)
        atoms = np.vstack([atoms_a, atoms_b])
        res = scipy.optimize.linprog(
            c=np.ones(len(atoms)), A_eq=atoms.T, b_eq=w, bounds=(0, None),
            method="highs",
        )
        if not res.success:
            raise ValueError("no decomposition found: input outside the dual ball span")
        lam = res.x
        w1 = atoms_a.T @ lam[: len(atoms_a)]
        w2 = w - w1
        return _finalize_split(w, w1, w2, a, b)

    val, w1 = _inf_convolution_descent(a, b, w, iters=budget)
    if val > 1 + 1e-6:
        raise ValueError(
            f"no decomposition with budget <= 1 found (best {val:.6f}); "
            "the dual-ball precondition likely fails"
        )
    return _finalize_split(w, w1, w - w1, a, b)


def _orient_split(spec: MaxOf, a: NormSpec, spiky: np.ndarray, clamped: np.ndarray):
    # the spiky part is measured in l1 (dual of linf); the clamp in k*linf
    a_is_linf = isinstance(a, Lp) and math.isinf(a.p)
    return (spiky, clamped) if a_is_linf else (clamped, spiky)


def _finalize_split(w, w1, w2, a, b) -> MaxDualSplit:
    split = MaxDualSplit(
        w1=w1,
        w2=w2,
        budget1=eval_norm(dual_spec(a), w1) if np.any(w1) else 0.0,
        budget2=eval_norm(dual_spec(b), w2) if np.any(w2) else 0.0,
    )
    split.validate(as_vector(w))
    return split


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Embedding:
    """Linear map R^k -> R^n with declared two-sided distortion.

    Invariant (audited): ||Ex||_target <= ||x||_source <= distortion * ||Ex||_target.
    """

    matrix: np.ndarray = field(repr=False)
    distortion: float = 1.0
    source: NormSpec = None
    target: NormSpec = None

    def __post_init__(self):
        E = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        object.__setattr__(self, "matrix", E)
        if self.distortion < 1:
            raise ValueError("distortion must be >= 1")
        if np.linalg.matrix_rank(E) < E.shape[1]:
            raise ValueError("embedding matrix must have full column rank")

    @property
    def source_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def target_dim(self) -> int:
        return self.matrix.shape[0]


def audit_embedding(emb: Embedding, trials: int = 200, seed: int = 0,
                    tol: float = 1e-9) -> bool:
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        x = rng.standard_normal(emb.source_dim)
        sx = eval_norm(emb.source, x)
        tx = eval_norm(emb.target, emb.matrix @ x)
        if not (tx <= sx + tol and sx <= emb.distortion * tx + tol):
            return False
    return True


def linf_into_lp_embedding(r: int, p: float, n: int) -> Embedding:
    """Inclusion of the first r coordinates, rescaled so the max norm on
    R^r sits inside l_p on R^n with distortion r^(1/p).  Only the p >= 2
    construction is available."""
    if p < 2:
        raise ValueError("explicit construction requires p >= 2")
    if r > n:
        raise ValueError("r must not exceed n")
    alpha = r ** (1.0 / p) if not math.isinf(p) else 1.0
    E = np.zeros((n, r))
    E[:r, :r] = np.eye(r) / alpha
    return Embedding(matrix=E, distortion=alpha, source=Lp(math.inf), target=Lp(p))


def lift_dual_vector(emb: Embedding, w) -> np.ndarray:
    """Lift a source-dual vector through an embedding.

    Returns w' with <Ex, w'> = <x, w> for all x, minimizing the target
    dual norm over the affine coset w0 + null(E^T).  Piecewise-linear dual
    norms are solved exactly as linear programs; smooth l_q duals via
    L-BFGS; anything else by subgradient descent with restarts.
    """
    w = as_vector(w)
    E = emb.matrix
    n, k = E.shape
    if w.size != k:
        raise ValueError("w must live in the source dual")
    if n > 20:
        raise ValueError("numeric lift supported only up to target dimension 20")

    w0, *_ = np.linalg.lstsq(E.T, w, rcond=None)
    B = scipy.linalg.null_space(E.T)
    ydual = dual_spec(emb.target)

    if B.shape[1] == 0:
        wp = w0
    elif is_polyhedral(ydual):
        wp = _lift_lp(ydual, w0, B)
    elif isinstance(ydual, Lp) and 1 < ydual.p < math.inf:
        wp = _lift_smooth(ydual, w0, B)
    else:
        wp = _lift_subgradient(ydual, w0, B)

    resid = np.max(np.abs(E.T @ wp - w))
    if resid > 1e-9 * max(1.0, np.max(np.abs(w))):
        raise ValueError(f"lift violates the functional identity by {resid:.3e}")
    return wp


def _lift_lp(ydual: NormSpec, w0: np.ndarray, B: np.ndarray) -> np.ndarray:
    n, m = B.shape
    G = support_generators(ydual, n)
    # min t  s.t.  G (w0 + B z) <= t
    A_ub = np.hstack([G @ B, -np.ones((len(G), 1))])
    b_ub = -G @ w0
    c = np.zeros(m + 1)
    c[-1] = 1.0
    res = scipy.optimize.linprog(
        c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * (m + 1), method="highs"
    )
    if not res.success:
        raise ValueError(f"lift LP failed: {res.message}")
    return w0 + B @ res.x[:-1]


def _lift_smooth(ydual: Lp, w0: np.ndarray, B: np.ndarray) -> np.ndarray:
    def fg(z):
        u = w0 + B @ z
        val = eval_norm(ydual, u)
        grad = B.T @ norms.norm_subgradient(ydual, u)
        return val, grad

    best = None
    for z0 in (np.zeros(B.shape[1]), -np.linalg.lstsq(B, w0, rcond=None)[0]):
        res = scipy.optimize.minimize(fg, z0, jac=True, method="L-BFGS-B",
                                      options={"maxiter": 2000, "ftol": 1e-14})
        if best is None or res.fun < best.fun:
            best = res
    return w0 + B @ best.x


def _lift_subgradient(ydual: NormSpec, w0: np.ndarray, B: np.ndarray,
                      iters: int = 10_000, restarts: int = 5) -> np.ndarray:
    rng = np.random.default_rng(0xB0B)
    best_val, best_z = math.inf, np.zeros(B.shape[1])
    scale = max(1.0, lp_norm(w0, 2))
    for r in range(restarts):
        z = np.zeros(B.shape[1]) if r == 0 else rng.standard_normal(B.shape[1]) * scale
        for t in range(iters):
            u = w0 + B @ z
            val = eval_norm(ydual, u)
            if val < best_val:
                best_val, best_z = val, z.copy()
            z = z - (scale / (1 + t) ** 0.5) * (B.T @ norms.norm_subgradient(ydual, u))
    return w0 + B @ best_z


# ---------------------------------------------------------------------------
# structural audits
# ---------------------------------------------------------------------------

def check_disjoint_support_growth(spec: NormSpec, n: int, k: int, eps: float,
                                  trials: int = 50, seed: int = 0):
    """Audit the claim that k disjoint-support equal-norm vectors grow the
    norm past 1/eps.  Returns (ok, counterexample_or_None)."""
    if n < k:
        raise ValueError("need n >= k for disjoint supports")
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        blocks = np.array_split(rng.permutation(n), k)
        total = np.zeros(n)
        parts = []
        for blk in blocks:
            piece = np.zeros(n)
            piece[blk] = rng.standard_normal(len(blk))
            nrm = eval_norm(spec, piece)
            if nrm == 0:
                continue
            piece /= nrm
            parts.append(piece)
            total += piece
        if len(parts) < k:
            continue
        if eval_norm(spec, total) <= (1.0 / eps):
            return False, parts
    return True, None


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def embedding_to_json(emb: Embedding) -> dict:
    return {
        "matrix": emb.matrix.tolist(),
        "distortion": emb.distortion,
        "source": norms.spec_to_json(emb.source),
        "target": norms.spec_to_json(emb.target),
    }


def embedding_from_json(doc: dict | str) -> Embedding:
    if isinstance(doc, str):
        doc = json.loads(doc)
    return Embedding(
        matrix=np.array(doc["matrix"]),
        distortion=float(doc["distortion"]),
        source=norms.spec_from_json(doc["source"]),
        target=norms.spec_from_json(doc["target"]),
    )
