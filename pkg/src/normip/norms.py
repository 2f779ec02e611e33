"""Norm descriptors and evaluation, with brute-force dual oracles.

A :class:`NormSpec` describes a norm structurally: an l_p norm, a top-k
norm (sum of the k largest magnitudes), a pointwise max of two norms, an
h-sum over blocks, the gauge of an origin-symmetric polytope, a scaled
copy of another norm, the symbolic dual of another norm, or a black-box
symmetric norm oracle.  All specs are immutable and evaluation is pure,
so everything here is safe to call concurrently.

Normalization convention: ``||e_1|| = 1`` for every spec built from the
public constructors; :func:`audit_normalization` checks it.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .polytopes import Polytope, gauge_norm, polytope_from_json, polytope_to_json
from .vectors import as_vector

__all__ = [
    "NormSpec", "Lp", "TopK", "MaxOf", "HSum", "Scaled", "PolytopeGauge",
    "DualOf", "SymmetricOracle",
    "lp_norm", "dual_exponent", "topk_norm", "topk_dual_norm",
    "eval_norm", "dual_norm_bruteforce", "BruteForceResult",
    "audit_symmetry", "audit_normalization", "SymmetryReport",
    "support_generators", "unit_ball_vertices", "is_polyhedral",
    "norm_subgradient", "spec_to_json", "spec_from_json", "spec_dim",
]

INF = math.inf


# ---------------------------------------------------------------------------
# spec variants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormSpec:
    """Base class for norm descriptors."""

    def dual(self) -> "NormSpec":
        from .spaces import dual_spec

        return dual_spec(self)


@dataclass(frozen=True)
class Lp(NormSpec):
    p: float

    def __post_init__(self):
        if not (self.p >= 1):
            raise ValueError("p must be >= 1 (use math.inf for the max norm)")


@dataclass(frozen=True)
class TopK(NormSpec):
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class MaxOf(NormSpec):
    a: NormSpec
    b: NormSpec


@dataclass(frozen=True)
class HSum(NormSpec):
    """Norm of the block-norm vector: h(||v_1||, ..., ||v_d||)."""

    h: NormSpec
    parts: tuple
    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.parts) != len(self.dims):
            raise ValueError("parts and dims must have equal length")
        if any(d < 1 for d in self.dims):
            raise ValueError("block dimensions must be >= 1")

    def split(self, v: np.ndarray) -> list:
        bounds = np.cumsum((0,) + self.dims)
        if v.size != bounds[-1]:
            raise ValueError("dimension mismatch with block structure")
        return [v[bounds[i]:bounds[i + 1]] for i in range(len(self.dims))]


@dataclass(frozen=True)
class Scaled(NormSpec):
    """c * ||x||_inner; the dual scales by 1/c."""

    inner: NormSpec
    c: float

    def __post_init__(self):
        if not (self.c > 0):
            raise ValueError("scale must be positive")


@dataclass(frozen=True, eq=False)
class PolytopeGauge(NormSpec):
    poly: Polytope


@dataclass(frozen=True)
class DualOf(NormSpec):
    """Symbolic dual, used where no closed-form rewrite exists (MaxOf)."""

    primal: NormSpec


@dataclass(frozen=True, eq=False)
class SymmetricOracle(NormSpec):
    """Black-box norm; must be permutation/sign invariant and re-entrant."""

    fn: Callable[[np.ndarray], float] = field(repr=False)
    dim: int = 0
    dual_fn: Callable[[np.ndarray], float] | None = field(default=None, repr=False)


def spec_dim(spec: NormSpec) -> int | None:
    """Intrinsic dimension of a spec, or None if it applies to any n."""
    if isinstance(spec, HSum):
        return sum(spec.dims)
    if isinstance(spec, PolytopeGauge):
        return spec.poly.n
    if isinstance(spec, SymmetricOracle):
        return spec.dim
    if isinstance(spec, Scaled):
        return spec_dim(spec.inner)
    if isinstance(spec, MaxOf):
        return spec_dim(spec.a) or spec_dim(spec.b)
    if isinstance(spec, DualOf):
        return spec_dim(spec.primal)
    return None


# ---------------------------------------------------------------------------
# closed-form norms
# ---------------------------------------------------------------------------

def lp_norm(v, p: float) -> float:
    """(sum |v_i|^p)^(1/p); max magnitude when p is math.inf."""
    v = as_vector(v)
    if p < 1:
        raise ValueError("p must be >= 1")
    if math.isinf(p):
        return float(np.max(np.abs(v)))
    if p == 1:
        return float(np.sum(np.abs(v)))
    if p == 2:
        return float(np.linalg.norm(v))
    a = np.abs(v)
    m = a.max()
    if m == 0:
        return 0.0
    return float(m * np.sum((a / m) ** p) ** (1.0 / p))


def dual_exponent(p: float) -> float:
    """q with 1/p + 1/q = 1; maps 1 <-> inf and fixes 2."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if p == 1:
        return INF
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def topk_norm(v, k: int) -> float:
    """Sum of the k largest magnitudes of v."""
    v = as_vector(v)
    if not 1 <= k <= v.size:
        raise ValueError(f"k must be in [1, {v.size}]")
    a = np.abs(v)
    if k == v.size:
        return float(a.sum())
    part = np.partition(a, v.size - k)[v.size - k:]
    return float(part.sum())


def topk_dual_norm(w, k: int) -> float:
    """max(||w||_inf, ||w||_1 / k), the dual of the top-k norm."""
    w = as_vector(w)
    if not 1 <= k <= w.size:
        raise ValueError(f"k must be in [1, {w.size}]")
    a = np.abs(w)
    return float(max(a.max(), a.sum() / k))


def topk_magnitude_threshold(v: np.ndarray, k: int) -> float:
    """k-th largest magnitude, ties broken by lowest index."""
    a = np.abs(as_vector(v))
    order = np.lexsort((np.arange(a.size), -a))
    return float(a[order[k - 1]])


# ---------------------------------------------------------------------------
# evaluation dispatch
# ---------------------------------------------------------------------------

def eval_norm(spec: NormSpec, v) -> float:
    """Evaluate the norm described by spec at v."""
    v = as_vector(v)
    d = spec_dim(spec)
    if d is not None and d != v.size:
        raise ValueError(f"spec expects dimension {d}, got {v.size}")
    if isinstance(spec, Lp):
        return lp_norm(v, spec.p)
    if isinstance(spec, TopK):
        return topk_norm(v, spec.k)
    if isinstance(spec, Scaled):
        return spec.c * eval_norm(spec.inner, v)
    if isinstance(spec, MaxOf):
        return max(eval_norm(spec.a, v), eval_norm(spec.b, v))
    if isinstance(spec, HSum):
        block_norms = [eval_norm(p, b) for p, b in zip(spec.parts, spec.split(v))]
        return eval_norm(spec.h, np.array(block_norms) if block_norms else np.zeros(1))
    if isinstance(spec, PolytopeGauge):
        return gauge_norm(spec.poly, v)
    if isinstance(spec, SymmetricOracle):
        return float(spec.fn(v))
    if isinstance(spec, DualOf):
        from .spaces import eval_dual_of

        return eval_dual_of(spec.primal, v)
    raise TypeError(f"unknown spec {spec!r}")


def is_polyhedral(spec: NormSpec) -> bool:
    """True when the unit ball is a polytope we can enumerate."""
    if isinstance(spec, Lp):
        return spec.p == 1 or math.isinf(spec.p)
    if isinstance(spec, TopK):
        return True
    if isinstance(spec, Scaled):
        return is_polyhedral(spec.inner)
    if isinstance(spec, MaxOf):
        return is_polyhedral(spec.a) and is_polyhedral(spec.b)
    if isinstance(spec, HSum):
        return (
            isinstance(spec.h, Lp)
            and (spec.h.p == 1 or math.isinf(spec.h.p))
            and all(is_polyhedral(p) for p in spec.parts)
        )
    if isinstance(spec, PolytopeGauge):
        return True
    if isinstance(spec, DualOf):
        return is_polyhedral(spec.primal)
    return False


def support_generators(spec: NormSpec, n: int) -> np.ndarray:
    """Rows g_j with ||x|| = max_j <g_j, x>, including both signs.

    Only available for polyhedral specs; these are the vertex sets of the
    dual unit balls, read off the norm definitions directly.
    """
    if isinstance(spec, Lp) and math.isinf(spec.p):
        return np.vstack([np.eye(n), -np.eye(n)])
    if isinstance(spec, Lp) and spec.p == 1:
        if n > 24:
            raise ValueError("sign-pattern enumeration capped at dimension 24")
        return np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
    if isinstance(spec, TopK):
        if spec.k > n:
            raise ValueError("k exceeds dimension")
        if n > 24:
            raise ValueError("sign-support enumeration capped at dimension 24")
        gens = []
        for support in itertools.combinations(range(n), spec.k):
            for signs in itertools.product((-1.0, 1.0), repeat=spec.k):
                g = np.zeros(n)
                g[list(support)] = signs
                gens.append(g)
        return np.array(gens)
    if isinstance(spec, Scaled):
        return spec.c * support_generators(spec.inner, n)
    if isinstance(spec, MaxOf):
        return np.vstack([
            support_generators(spec.a, n),
            support_generators(spec.b, n),
        ])
    if isinstance(spec, PolytopeGauge):
        P = spec.poly
        if P.hrep is not None:
            return np.vstack([P.hrep, -P.hrep])
        from .polytopes import hrep_from_vertices

        A = hrep_from_vertices(P.vrep)
        return np.vstack([A, -A])
    if isinstance(spec, HSum):
        return _hsum_support_generators(spec, n)
    if isinstance(spec, DualOf):
        # generators of the dual norm = vertices of the primal ball
        return unit_ball_vertices(spec.primal, n)
    raise ValueError(f"no support generators for {spec!r}")


def _hsum_support_generators(spec: HSum, n: int) -> np.ndarray:
    if n != sum(spec.dims):
        raise ValueError("dimension mismatch")
    per_block = [support_generators(p, d) for p, d in zip(spec.parts, spec.dims)]
    offs = np.cumsum((0,) + spec.dims)
    if isinstance(spec.h, Lp) and spec.h.p == 1:
        # sum of block norms: pick one generator per block, all combos
        counts = [len(g) for g in per_block]
        total = int(np.prod(counts))
        if total > 200_000:
            raise ValueError("generator count exceeds cap")
        out = np.zeros((total, n))
        for row, combo in enumerate(itertools.product(*[range(c) for c in counts])):
            for i, j in enumerate(combo):
                out[row, offs[i]:offs[i + 1]] = per_block[i][j]
        return out
    if isinstance(spec.h, Lp) and math.isinf(spec.h.p):
        # max of block norms: block generators embedded independently
        rows = []
        for i, gens in enumerate(per_block):
            block = np.zeros((len(gens), n))
            block[:, offs[i]:offs[i + 1]] = gens
            rows.append(block)
        return np.vstack(rows)
    raise ValueError("h-sum generators available only for l1/linf outer norms")


def unit_ball_vertices(spec: NormSpec, n: int, cap: int = 2_000_000) -> np.ndarray:
    """Vertex list of the unit ball of a polyhedral spec.

    Built by enumerating the facets induced by the support generators and
    passing to the polar polytope, so it stays independent of any
    closed-form dual formulas.
    """
    from .polytopes import vertices_from_hrep

    if isinstance(spec, Scaled):
        return unit_ball_vertices(spec.inner, n, cap) / spec.c
    if isinstance(spec, PolytopeGauge):
        return spec.poly.with_vertices().vrep
    if isinstance(spec, HSum) and isinstance(spec.h, Lp):
        offs = np.cumsum((0,) + spec.dims)
        per_block = [unit_ball_vertices(p, d, cap) for p, d in zip(spec.parts, spec.dims)]
        if spec.h.p == 1:
            rows = []
            for i, verts in enumerate(per_block):
                block = np.zeros((len(verts), n))
                block[:, offs[i]:offs[i + 1]] = verts
                rows.append(block)
            return np.vstack(rows)
        if math.isinf(spec.h.p):
            counts = [len(v) for v in per_block]
            if int(np.prod(counts)) > cap:
                raise ValueError(f"vertex count exceeds cap {cap}")
            out = np.zeros((int(np.prod(counts)), n))
            for row, combo in enumerate(itertools.product(*[range(c) for c in counts])):
                for i, j in enumerate(combo):
                    out[row, offs[i]:offs[i + 1]] = per_block[i][j]
            return out
    if isinstance(spec, DualOf):
        # ball of the dual norm = conv of the primal's support generators
        from .polytopes import _extreme_points_only

        return _extreme_points_only(support_generators(spec.primal, n))
    from .polytopes import VERTEX_ENUM_MAX_DIM

    if n > VERTEX_ENUM_MAX_DIM:
        direct = _direct_ball_vertices(spec, n, cap)
        if direct is not None:
            return direct
    gens = support_generators(spec, n)
    if len(gens) > cap:
        raise ValueError(f"generator count exceeds cap {cap}")
    verts = vertices_from_hrep(_halve(gens))
    if len(verts) > cap:
        raise ValueError(f"vertex count exceeds cap {cap}")
    return verts


def _direct_ball_vertices(spec: NormSpec, n: int, cap: int) -> np.ndarray | None:
    """Definitional vertex sets for dimensions beyond the polar-hull route."""
    if isinstance(spec, Lp) and spec.p == 1:
        return np.vstack([np.eye(n), -np.eye(n)])
    if isinstance(spec, Lp) and math.isinf(spec.p):
        if 2 ** n > cap:
            raise ValueError(f"vertex count exceeds cap {cap}")
        return np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
    if isinstance(spec, TopK):
        if 2 ** n + 2 * n > cap:
            raise ValueError(f"vertex count exceeds cap {cap}")
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
        return np.vstack([np.eye(n), -np.eye(n), signs / spec.k])
    return None


def _halve(rows: np.ndarray) -> np.ndarray:
    from .polytopes import _halve_symmetric

    return _halve_symmetric(rows)


@dataclass(frozen=True)
class BruteForceResult:
    value: float
    exact: bool

    def __float__(self):
        return self.value


def dual_norm_bruteforce(spec: NormSpec, w, budget: int = 64) -> BruteForceResult:
    """sup of <v, w> over the unit ball of spec, computed from first principles.

    Polyhedral balls are handled exactly by vertex enumeration; everything
    else falls back to projected ascent from ``budget`` random starts and is
    flagged as a heuristic lower bound.
    """
    w = as_vector(w)
    n = w.size
    if is_polyhedral(spec):
        verts = unit_ball_vertices(spec, n)
        return BruteForceResult(float(np.max(verts @ w)), exact=True)
    return BruteForceResult(_ascent_dual(spec, w, budget), exact=False)


def _ascent_dual(spec: NormSpec, w: np.ndarray, budget: int) -> float:
    n = w.size
    rng = np.random.default_rng(0x5CA1AB1E)
    best = 0.0
    starts = max(4, budget)
    for trial in range(starts):
        v = w.copy() if trial == 0 else rng.standard_normal(n)
        nv = eval_norm(spec, v)
        if nv == 0:
            continue
        v = v / nv
        best = max(best, float(v @ w))
        for it in range(200):
            v = v + (0.5 / (1 + it)) * w
            nv = eval_norm(spec, v)
            if nv == 0:
                break
            v = v / nv
            best = max(best, float(v @ w))
    return best


def norm_subgradient(spec: NormSpec, u: np.ndarray) -> np.ndarray:
    """A subgradient of the norm at u (g with <g,u> = ||u||, ||g||* <= 1)."""
    u = as_vector(u)
    if not np.any(u):
        return np.zeros(u.size)
    if isinstance(spec, Lp):
        p = spec.p
        if p == 1:
            return np.sign(u)
        if math.isinf(p):
            j = int(np.argmax(np.abs(u)))
            g = np.zeros(u.size)
            g[j] = np.sign(u[j])
            return g
        a = np.abs(u)
        nrm = lp_norm(u, p)
        return np.sign(u) * (a / nrm) ** (p - 1.0)
    if isinstance(spec, TopK):
        a = np.abs(u)
        order = np.lexsort((np.arange(a.size), -a))
        g = np.zeros(u.size)
        top = order[: spec.k]
        g[top] = np.sign(u[top])
        return g
    if isinstance(spec, Scaled):
        return spec.c * norm_subgradient(spec.inner, u)
    if isinstance(spec, MaxOf):
        na, nb = eval_norm(spec.a, u), eval_norm(spec.b, u)
        return norm_subgradient(spec.a if na >= nb else spec.b, u)
    if isinstance(spec, HSum):
        blocks = spec.split(u)
        q = np.array([eval_norm(p, b) for p, b in zip(spec.parts, blocks)])
        outer = norm_subgradient(spec.h, q) if np.any(q) else np.zeros(len(blocks))
        parts = []
        for w_i, p_i, b_i in zip(outer, spec.parts, blocks):
            parts.append(w_i * norm_subgradient(p_i, b_i) if np.any(b_i) else np.zeros(b_i.size))
        return np.concatenate(parts)
    if isinstance(spec, PolytopeGauge):
        P = spec.poly
        if P.hrep is not None:
            scores = P.hrep @ u
            j = int(np.argmax(np.abs(scores)))
            return np.sign(scores[j]) * P.hrep[j]
        from .polytopes import hrep_from_vertices

        A = hrep_from_vertices(P.vrep)
        scores = A @ u
        j = int(np.argmax(np.abs(scores)))
        return np.sign(scores[j]) * A[j]
    raise ValueError(f"no subgradient rule for {spec!r}")


# ---------------------------------------------------------------------------
# audits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SymmetryReport:
    passed: bool
    trials: int
    failure_kind: str | None = None
    counterexample: tuple | None = None

    def __bool__(self):
        return self.passed


def audit_symmetry(spec: NormSpec, trials: int, seed: int = 0,
                   dim: int | None = None, tol: float = 1e-9) -> SymmetryReport:
    """Randomized check of permutation invariance, sign invariance and
    coordinate monotonicity; reports the first counterexample found."""
    n = spec_dim(spec) or dim
    if n is None:
        raise ValueError("spec has no intrinsic dimension; pass dim explicitly")
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        v = rng.standard_normal(n)
        base = eval_norm(spec, v)
        scale = max(1.0, abs(base))

        perm = rng.permutation(n)
        if abs(eval_norm(spec, v[perm]) - base) > tol * scale:
            return SymmetryReport(False, trials, "permutation", (v, perm))

        signs = rng.choice([-1.0, 1.0], size=n)
        if abs(eval_norm(spec, v * signs) - base) > tol * scale:
            return SymmetryReport(False, trials, "sign", (v, signs))

        shrink = v * rng.uniform(0.0, 1.0, size=n)
        if eval_norm(spec, shrink) > base + tol * scale:
            return SymmetryReport(False, trials, "monotonicity", (v, shrink))
    return SymmetryReport(True, trials)


def audit_normalization(spec: NormSpec, dim: int | None = None,
                        tol: float = 1e-9) -> bool:
    """Check the ||e_1|| = 1 convention."""
    n = spec_dim(spec) or dim
    if n is None:
        raise ValueError("spec has no intrinsic dimension; pass dim explicitly")
    e1 = np.zeros(n)
    e1[0] = 1.0
    return abs(eval_norm(spec, e1) - 1.0) <= tol


def make_symmetric_oracle(fn: Callable[[np.ndarray], float], dim: int,
                          trials: int = 64, seed: int = 0,
                          dual_fn: Callable | None = None) -> SymmetricOracle:
    """Wrap a black-box norm after it passes the symmetry and normalization
    audits.  Non-normalized oracles are rejected, not rescaled."""
    spec = SymmetricOracle(fn=fn, dim=dim, dual_fn=dual_fn)
    report = audit_symmetry(spec, trials=trials, seed=seed)
    if not report.passed:
        raise ValueError(f"oracle failed the {report.failure_kind} audit")
    if not audit_normalization(spec):
        raise ValueError("oracle is not normalized to ||e_1|| = 1")
    return spec


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

def spec_to_json(spec: NormSpec) -> dict:
    if isinstance(spec, Lp):
        return {"type": "lp", "p": "inf" if math.isinf(spec.p) else spec.p}
    if isinstance(spec, TopK):
        return {"type": "topk", "k": spec.k}
    if isinstance(spec, MaxOf):
        return {"type": "max", "a": spec_to_json(spec.a), "b": spec_to_json(spec.b)}
    if isinstance(spec, HSum):
        return {
            "type": "hsum",
            "h": spec_to_json(spec.h),
            "parts": [spec_to_json(p) for p in spec.parts],
            "dims": list(spec.dims),
        }
    if isinstance(spec, Scaled):
        return {"type": "scaled", "inner": spec_to_json(spec.inner), "c": spec.c}
    if isinstance(spec, PolytopeGauge):
        return {"type": "polytope", "rep": polytope_to_json(spec.poly)}
    if isinstance(spec, DualOf):
        return {"type": "dual_of", "primal": spec_to_json(spec.primal)}
    raise ValueError(f"{type(spec).__name__} does not serialize to JSON")


def spec_from_json(doc: dict | str) -> NormSpec:
    if isinstance(doc, str):
        doc = json.loads(doc)
    t = doc["type"]
    if t == "lp":
        p = doc["p"]
        return Lp(INF if p in ("inf", "Infinity") else float(p))
    if t == "topk":
        return TopK(int(doc["k"]))
    if t == "max":
        return MaxOf(spec_from_json(doc["a"]), spec_from_json(doc["b"]))
    if t == "hsum":
        return HSum(
            h=spec_from_json(doc["h"]),
            parts=tuple(spec_from_json(p) for p in doc["parts"]),
            dims=tuple(doc["dims"]),
        )
    if t == "scaled":
        return Scaled(spec_from_json(doc["inner"]), float(doc["c"]))
    if t == "polytope":
        return PolytopeGauge(polytope_from_json(doc["rep"]))
    if t == "dual_of":
        return DualOf(spec_from_json(doc["primal"]))
    raise ValueError(f"unknown spec type {t!r}")
