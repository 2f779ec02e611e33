"""Randomized sparsification of norm-bounded vectors.

Two constructions behind one (epsilon, delta, D) contract:

* magnitude-power importance sampling for l_p balls, and
* dyadic level-set sampling for general symmetric norms.

Both produce an unbiased sparse estimate ``phi(v)`` with at most ``s``
nonzeros such that ``<phi(v), w>`` lands within epsilon of ``<v, w>``
with probability 1 - delta for every fixed dual-ball ``w``.  A third
"dense" kind is the identity map, used for uncompressed baselines.

Sparsifiers draw through an explicit numpy Generator; distinct
generators may run in parallel, there is no shared state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import norms
from .norms import NormSpec, lp_norm
from .vectors import SparseVector, as_vector

__all__ = [
    "SparsifierSpec", "SamplingDistribution", "LevelPartition",
    "lp_sampling", "level_set", "dense",
    "lp_distribution", "levelset_distribution", "level_partition",
    "draw_one_sparse", "lp_sparsify", "symmetric_sparsify", "sparsify",
    "weak_qnorm_estimate", "weak_moment_exhaustive_max",
    "levelset_weak_moment_bound", "p_hat",
    "sparsifier_to_json", "sparsifier_from_json",
]

LP_SAMPLE_CONSTANT = 36.0
LEVELSET_SAMPLE_CONSTANT = 8.0


# ---------------------------------------------------------------------------
# specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SparsifierSpec:
    """(epsilon, delta, D) sparsifier with a fixed per-call sample count s.

    ``kind`` is one of "lp", "level_set", "dense".  The sample counts are
    set by the factory functions below; delta != 1/3 scales s by the
    multiplier 1/(3*delta).
    """

    kind: str
    epsilon: float
    delta: float
    sample_count: int
    sparsity_cap: int
    p: float | None = None
    norm: NormSpec | None = None
    k: int | None = None
    dim: int | None = None
    constant: float = 0.0

    def __post_init__(self):
        if self.kind not in ("lp", "level_set", "dense"):
            raise ValueError(f"unknown sparsifier kind {self.kind!r}")
        if self.kind != "dense" and not (0 < self.epsilon < 1 and 0 < self.delta < 1):
            raise ValueError("epsilon and delta must lie in (0, 1)")
        if self.sample_count > self.sparsity_cap:
            raise ValueError("sample count exceeds the declared sparsity cap")


def _delta_multiplier(delta: float) -> float:
    return 1.0 / (3.0 * delta)


def lp_sampling(p: float, epsilon: float, delta: float = 1 / 3,
                constant: float = LP_SAMPLE_CONSTANT,
                sample_cap: int | None = None,
                dim: int | None = None) -> SparsifierSpec:
    """Sampler for the l_p ball: s = ceil(constant * eps^-max(2, p))."""
    if not 1 <= p < math.inf:
        raise ValueError("lp sampling requires 1 <= p < inf")
    s = math.ceil(constant * epsilon ** (-max(2.0, p)) * _delta_multiplier(delta))
    if sample_cap is not None:
        s = min(s, sample_cap)
    return SparsifierSpec(kind="lp", epsilon=epsilon, delta=delta, p=p,
                          sample_count=s, sparsity_cap=s, dim=dim,
                          constant=constant)


def p_hat(k: int, epsilon: float) -> float:
    """Growth exponent log(k) / log(1/epsilon) tying k to the accuracy."""
    if k < 2 or not 0 < epsilon < 1:
        raise ValueError("need k >= 2 and epsilon in (0, 1)")
    return math.log(k) / math.log(1.0 / epsilon)


def level_set(norm: NormSpec, k: int, epsilon: float, n: int,
              delta: float = 1 / 3,
              constant: float = LEVELSET_SAMPLE_CONSTANT,
              sample_cap: int | None = None) -> SparsifierSpec:
    """Level-set sampler for a symmetric norm on R^n.

    s = ceil((C * p/eps)^(2p) * (k log n)^2) with p = log k / log(1/eps).
    """
    ph = p_hat(k, epsilon)
    s = math.ceil(
        (constant * ph / epsilon) ** (2 * ph)
        * (k * math.log(max(2, n))) ** 2
        * _delta_multiplier(delta)
    )
    if sample_cap is not None:
        s = min(s, sample_cap)
    return SparsifierSpec(kind="level_set", epsilon=epsilon, delta=delta,
                          norm=norm, k=k, sample_count=s,
                          sparsity_cap=s, dim=n, constant=constant)


def dense(n: int) -> SparsifierSpec:
    """Identity map: no compression, D = n."""
    return SparsifierSpec(kind="dense", epsilon=0.25, delta=1 / 3,
                          sample_count=n, sparsity_cap=n, dim=n)


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SamplingDistribution:
    """Probabilities over coordinates, zero wherever the vector is zero."""

    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        if np.min(p) < 0:
            raise ValueError("negative probability")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1")

    def validate_support(self, v: np.ndarray) -> None:
        if np.any((v == 0) & (self.probs > 0)):
            raise ValueError("distribution puts mass on a zero coordinate")


def lp_distribution(v, p: float) -> SamplingDistribution:
    """p_i = |v_i|^p for a unit-l_p-norm vector v."""
    v = as_vector(v)
    if not np.any(v):
        raise ValueError("zero vector has no sampling distribution")
    probs = np.abs(v) ** p
    probs /= probs.sum()  # normalize away float round-off
    dist = SamplingDistribution(probs=probs)
    dist.validate_support(v)
    return dist


@dataclass(frozen=True, eq=False)
class LevelPartition:
    """Dyadic magnitude bands (2^-i, 2^-i+1] for i = 1..R, plus a tail."""

    band_ids: tuple
    bands: tuple
    tail: np.ndarray
    R: int

    @property
    def classes(self) -> list:
        out = list(self.bands)
        if self.tail.size:
            out.append(self.tail)
        return out

    @property
    def num_classes(self) -> int:
        return len(self.bands) + (1 if self.tail.size else 0)


def level_partition(v) -> LevelPartition:
    v = as_vector(v)
    n = v.size
    a = np.abs(v)
    if np.max(a) > 1 + 1e-9:
        raise ValueError("level-set sampling expects magnitudes <= 1")
    R = max(1, math.ceil(3 * math.log2(max(2, n))))
    support = np.flatnonzero(a)
    if support.size == 0:
        raise ValueError("zero vector has no sampling distribution")
    mags = np.minimum(a[support], 1.0)
    # band i holds magnitudes in (2^-i, 2^-(i-1)]; exact powers of two sit
    # on their band's upper boundary, which floor(-log2) already respects
    with np.errstate(divide="ignore"):
        idx = np.floor(-np.log2(mags)).astype(np.int64) + 1
    idx = np.maximum(idx, 1)
    bands = []
    band_ids = []
    for i in sorted(set(idx[idx <= R])):
        bands.append(support[idx == i])
        band_ids.append(int(i))
    tail = support[idx > R]
    return LevelPartition(band_ids=tuple(band_ids), bands=tuple(bands),
                          tail=tail, R=R)


def levelset_distribution(v, n: int | None = None) -> SamplingDistribution:
    """Uniform over nonempty magnitude classes, uniform inside each class.

    Class weight 1/(number of nonempty classes) rather than 1/(R+1):
    probabilities only increase, which preserves unbiasedness and lowers
    variance.  Tail coordinates are sampled, never dropped.
    """
    v = as_vector(v)
    if n is not None and n != v.size:
        raise ValueError("dimension mismatch")
    part = level_partition(v)
    m = part.num_classes
    probs = np.zeros(v.size)
    for cls in part.classes:
        probs[cls] = 1.0 / (m * cls.size)
    probs /= probs.sum()
    dist = SamplingDistribution(probs=probs)
    dist.validate_support(v)
    return dist


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def draw_one_sparse(v, dist: SamplingDistribution, rng) -> SparseVector:
    """One draw of the unbiased single-coordinate estimate e_t * v_t / p_t."""
    v = as_vector(v)
    t = int(rng.choice(v.size, p=dist.probs))
    return SparseVector(dim=v.size, idx=np.array([t]),
                        val=np.array([v[t] / dist.probs[t]]))


def _merge_draws(v: np.ndarray, probs: np.ndarray, samples: np.ndarray,
                 s: int, scale: float) -> SparseVector:
    counts = np.bincount(samples, minlength=v.size)
    support = np.flatnonzero(counts)
    vals = scale * counts[support] * (v[support] / probs[support]) / s
    return SparseVector(dim=v.size, idx=support, val=vals)


def lp_sparsify(v, spec: SparsifierSpec, rng) -> SparseVector:
    """Average of s importance-sampled single-coordinate estimates.

    Rescales internally so only the direction is sampled:
    phi(v) = ||v||_p * phi(v / ||v||_p).  Repeated indices merge by value
    addition, so the output never exceeds s nonzeros.
    """
    if spec.kind != "lp":
        raise ValueError("spec is not an lp sampler")
    v = as_vector(v)
    nv = lp_norm(v, spec.p)
    if nv == 0:
        return SparseVector(dim=v.size, idx=np.array([], dtype=np.int64),
                            val=np.array([]))
    u = v / nv
    dist = lp_distribution(u, spec.p)
    s = spec.sample_count
    samples = rng.choice(v.size, size=s, p=dist.probs)
    out = _merge_draws(u, dist.probs, samples, s, nv)
    assert out.nnz <= spec.sparsity_cap
    return out


def symmetric_sparsify(v, spec: SparsifierSpec, rng) -> SparseVector:
    """Level-set sampler for a vector inside the governing symmetric ball."""
    if spec.kind != "level_set":
        raise ValueError("spec is not a level-set sampler")
    v = as_vector(v)
    if spec.norm is not None:
        nv = norms.eval_norm(spec.norm, v)
        if nv > 1 + 1e-9:
            raise ValueError(f"vector has norm {nv:.6f} > 1 under the governing norm")
    if not np.any(v):
        return SparseVector(dim=v.size, idx=np.array([], dtype=np.int64),
                            val=np.array([]))
    dist = levelset_distribution(v)
    s = spec.sample_count
    samples = rng.choice(v.size, size=s, p=dist.probs)
    out = _merge_draws(v, dist.probs, samples, s, 1.0)
    assert out.nnz <= spec.sparsity_cap
    return out


def sparsify(v, spec: SparsifierSpec, rng) -> SparseVector:
    """Dispatch on the spec kind; the dense kind returns v unchanged."""
    if spec.kind == "lp":
        return lp_sparsify(v, spec, rng)
    if spec.kind == "level_set":
        return symmetric_sparsify(v, spec, rng)
    return SparseVector.from_dense(as_vector(v))


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def weak_qnorm_estimate(samples, q: float) -> float:
    """Plug-in estimate of the weak q-norm sup_l Pr(|Z| >= l)^(1/q) * l.

    Uses order statistics: max over ranks r of (r/n)^(1/q) * |Z|_(r).
    Diagnostic only; intended for at least ~100 samples.
    """
    a = np.sort(np.abs(np.asarray(samples, dtype=np.float64)))[::-1]
    if a.size == 0:
        raise ValueError("need at least one sample")
    ranks = np.arange(1, a.size + 1)
    return float(np.max((ranks / a.size) ** (1.0 / q) * a))


def weak_moment_exhaustive_max(v, probs, p_hat_value: float,
                               subset_norm) -> float:
    """Exhaustive max over nonempty subsets S of Pr(t in S)^(-1/p) ||v_S||.

    ``subset_norm(indices)`` evaluates the governing norm of v restricted
    to the index set.  Exponential in n; guarded at n <= 20.
    """
    v = as_vector(v)
    probs = np.asarray(probs, dtype=np.float64)
    n = v.size
    if n > 20:
        raise ValueError("exhaustive subset check capped at dimension 20")
    best = 0.0
    for mask in range(1, 1 << n):
        idx = [i for i in range(n) if mask >> i & 1]
        pr = probs[idx].sum()
        nrm = subset_norm(idx)
        if pr == 0.0:
            if nrm > 0:
                return math.inf
            continue
        best = max(best, pr ** (-1.0 / p_hat_value) * nrm)
    return best


def levelset_weak_moment_bound(v, k: int, p_hat_value: float) -> tuple:
    """Finite-check bound (k * R')^(1/p) plus the tail-class term.

    R' counts the nonempty classes of the level partition.  The tail term
    covers subsets of coordinates below the 2^-R cutoff, whose magnitudes
    are at most n^-3.
    """
    v = as_vector(v)
    part = level_partition(v)
    rp = part.num_classes
    main = (k * rp) ** (1.0 / p_hat_value)
    if part.tail.size:
        tail = (rp * v.size) ** (1.0 / p_hat_value) * k * 2.0 ** (-part.R)
    else:
        tail = 0.0
    return main, tail


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def sparsifier_to_json(spec: SparsifierSpec) -> dict:
    doc = {
        "kind": spec.kind,
        "epsilon": spec.epsilon,
        "delta": spec.delta,
        "sample_count": spec.sample_count,
        "sparsity_cap": spec.sparsity_cap,
        "constant": spec.constant,
    }
    if spec.p is not None:
        doc["p"] = spec.p
    if spec.k is not None:
        doc["k"] = spec.k
    if spec.dim is not None:
        doc["dim"] = spec.dim
    if spec.norm is not None:
        doc["norm"] = norms.spec_to_json(spec.norm)
    return doc


def sparsifier_from_json(doc: dict | str) -> SparsifierSpec:
    if isinstance(doc, str):
        doc = json.loads(doc)
    return SparsifierSpec(
        kind=doc["kind"],
        epsilon=float(doc["epsilon"]),
        delta=float(doc["delta"]),
        sample_count=int(doc["sample_count"]),
        sparsity_cap=int(doc["sparsity_cap"]),
        p=float(doc["p"]) if "p" in doc else None,
        k=int(doc["k"]) if "k" in doc else None,
        dim=int(doc["dim"]) if "dim" in doc else None,
        norm=norms.spec_from_json(doc["norm"]) if "norm" in doc else None,
        constant=float(doc.get("constant", 0.0)),
    )
