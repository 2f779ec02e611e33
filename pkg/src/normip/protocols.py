"""Two-party protocol engine with bit-exact transcript accounting.

A protocol is an explicit combinator tree (data, serializable), and a run
is deterministic given a numpy Generator.  The party holding the primal
vector is called Alice, the dual-vector holder Bob; ``Swap`` exchanges the
roles without consuming randomness, so double swaps are bit-identical to
the unswapped protocol under the same seed.

Estimated values travel as fixed-point codes: the quantizer grid has step
eps / (4 * D * n), which keeps the total dequantization error across a
D-sparse message within eps/4.  Only transmitted payloads count toward
``Transcript.total_bits``; receiver-side computation (dual splits, lifts,
norm evaluations of the receiver's own vector) is free, matching the
one-way accounting convention.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import norms, polytopes, sparsifiers, spaces
from .norms import Lp, MaxOf, NormSpec, Scaled, TopK, eval_norm
from .polytopes import Polytope
from .sparsifiers import SparsifierSpec, sparsify
from .spaces import Embedding, lift_dual_vector, split_max_dual
from .vectors import SparseVector, as_vector

__all__ = [
    "ALICE", "BOB", "Message", "Transcript", "ProtocolOutcome",
    "ProtocolSpec", "OneWaySparsify", "Swap", "MaxSplit", "HSumCompose",
    "EmbedReduce", "VertexSample",
    "Quantizer", "quantize_value", "run_protocol", "declared_cost",
    "declared_eps", "declared_delta",
    "lp_one_way", "topk_protocol", "hsum_compose_protocol",
    "protocol_to_json", "protocol_from_json", "transcript_debug_lines",
]

ALICE = "Alice"
BOB = "Bob"

VERTEX_SAMPLE_CONSTANT = 8.0
MEDIAN_REPEAT_FACTOR = 4


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Quantizer:
    """Fixed-point grid for payload values: step eps/(4*D*n), guard n/eps."""

    n: int
    eps: float
    D: int

    @property
    def step(self) -> float:
        return self.eps / (4.0 * self.D * self.n)

    @property
    def guard(self) -> float:
        return self.n / self.eps

    @property
    def max_code(self) -> int:
        return math.ceil(self.guard / self.step)

    @property
    def value_bits(self) -> int:
        return (2 * self.max_code).bit_length()

    def encode(self, x: float) -> int:
        if abs(x) > self.guard:
            raise ValueError(f"value {x!r} outside the quantizer guard {self.guard}")
        code = int(np.round(x / self.step))  # round half to even
        assert abs(code) <= self.max_code
        return code

    def decode(self, code: int) -> float:
        return code * self.step

    def meta(self) -> dict:
        return {"n": self.n, "eps": self.eps, "D": self.D,
                "step": self.step, "value_bits": self.value_bits}


def quantize_value(x: float, n: int, eps: float, D: int) -> tuple:
    """Quantize one value on the protocol grid; returns (bits, dequantized)."""
    q = Quantizer(n=n, eps=eps, D=D)
    code = q.encode(float(x))
    return q.value_bits, q.decode(code)


# ---------------------------------------------------------------------------
# transcripts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Message:
    sender: str
    bits: int
    payload: int

    def __post_init__(self):
        if self.bits < 0 or self.payload < 0 or self.payload >= (1 << max(1, self.bits)):
            raise ValueError("payload does not fit the declared bit length")


@dataclass(frozen=True)
class Transcript:
    messages: tuple
    quantizer: dict | None = None

    @property
    def total_bits(self) -> int:
        return sum(m.bits for m in self.messages)

    def senders(self) -> set:
        return {m.sender for m in self.messages}


def transcript_debug_lines(t: Transcript) -> list:
    """One line per message: sender, bit length, hex payload."""
    return [f"{m.sender} {m.bits} 0x{m.payload:x}" for m in t.messages]


@dataclass(frozen=True)
class ProtocolOutcome:
    estimate: float
    transcript: Transcript
    trace: dict


# ---------------------------------------------------------------------------
# combinator tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProtocolSpec:
    pass


@dataclass(frozen=True, eq=False)
class OneWaySparsify(ProtocolSpec):
    """Sender sparsifies their vector under ``space`` and transmits it."""

    sparsifier: SparsifierSpec
    space: NormSpec


@dataclass(frozen=True, eq=False)
class Swap(ProtocolSpec):
    """Run the inner protocol with the two parties' roles exchanged."""

    inner: ProtocolSpec


@dataclass(frozen=True, eq=False)
class MaxSplit(ProtocolSpec):
    """Protocol for the max of two norms: the receiver splits their dual
    vector and the two sub-protocols run on the normalized pieces."""

    a: NormSpec
    b: NormSpec
    inner_a: ProtocolSpec
    inner_b: ProtocolSpec


@dataclass(frozen=True, eq=False)
class HSumCompose(ProtocolSpec):
    """Block composition: sparsify the vector of block norms, then run the
    per-block protocols median-amplified on the sampled blocks."""

    h: NormSpec
    parts: tuple
    dims: tuple
    h_sparsifier: SparsifierSpec
    inner_parts: tuple
    repeats: int | None = None

    def __post_init__(self):
        if not (len(self.parts) == len(self.dims) == len(self.inner_parts)):
            raise ValueError("parts, dims and inner_parts must align")

    @property
    def gamma(self) -> float:
        return self.h_sparsifier.epsilon

    @property
    def d(self) -> int:
        return len(self.parts)

    def effective_sparsity(self) -> int:
        return min(self.h_sparsifier.sparsity_cap, self.d)

    def repeat_count(self) -> int:
        if self.repeats is not None:
            return self.repeats
        d2 = self.effective_sparsity()
        return math.ceil(MEDIAN_REPEAT_FACTOR * math.log2(d2 + 2))


@dataclass(frozen=True, eq=False)
class EmbedReduce(ProtocolSpec):
    """Map the sender through an embedding, lift the receiver's dual vector,
    run the inner protocol at the tighter accuracy, rescale the estimate."""

    embedding: Embedding
    inner: ProtocolSpec


@dataclass(frozen=True, eq=False)
class VertexSample(ProtocolSpec):
    """Estimate a gauge-normed inner product by sampling vertex names from a
    convex decomposition of the sender's point."""

    polytope: Polytope
    eps: float
    sample_constant: float = VERTEX_SAMPLE_CONSTANT

    def sample_count(self) -> int:
        return math.ceil(self.sample_constant / self.eps ** 2)


# ---------------------------------------------------------------------------
# declared contracts
# ---------------------------------------------------------------------------

def declared_eps(spec: ProtocolSpec) -> float:
    if isinstance(spec, OneWaySparsify):
        return spec.sparsifier.epsilon
    if isinstance(spec, Swap):
        return declared_eps(spec.inner)
    if isinstance(spec, MaxSplit):
        return max(declared_eps(spec.inner_a), declared_eps(spec.inner_b))
    if isinstance(spec, HSumCompose):
        return 2 * max(declared_eps(p) for p in spec.inner_parts) + spec.gamma
    if isinstance(spec, EmbedReduce):
        return spec.embedding.distortion * declared_eps(spec.inner)
    if isinstance(spec, VertexSample):
        return spec.eps
    raise TypeError(f"unknown protocol node {spec!r}")


def declared_delta(spec: ProtocolSpec) -> float:
    if isinstance(spec, OneWaySparsify):
        return spec.sparsifier.delta
    if isinstance(spec, Swap):
        return declared_delta(spec.inner)
    if isinstance(spec, MaxSplit):
        return declared_delta(spec.inner_a) + declared_delta(spec.inner_b)
    if isinstance(spec, HSumCompose):
        # budget thirds: the block-norm sketch enters twice, the amplified
        # inner estimates once
        return 3 * spec.h_sparsifier.delta
    if isinstance(spec, EmbedReduce):
        return declared_delta(spec.inner)
    if isinstance(spec, VertexSample):
        return 1 / 3
    raise TypeError(f"unknown protocol node {spec!r}")


def _index_bits(n: int) -> int:
    return max(1, math.ceil(math.log2(n))) if n > 1 else 1


def _one_way_quantizer(spec: OneWaySparsify, n: int) -> Quantizer:
    d_eff = min(spec.sparsifier.sparsity_cap, n)
    return Quantizer(n=n, eps=spec.sparsifier.epsilon, D=d_eff)


def declared_cost(spec: ProtocolSpec, n: int) -> int:
    """Closed-form upper bound on transcript bits for dimension-n inputs.

    Every run satisfies transcript.total_bits <= declared_cost.
    """
    if isinstance(spec, OneWaySparsify):
        q = _one_way_quantizer(spec, n)
        d_eff = min(spec.sparsifier.sparsity_cap, n)
        return d_eff * (_index_bits(n) + q.value_bits)
    if isinstance(spec, Swap):
        return declared_cost(spec.inner, n)
    if isinstance(spec, MaxSplit):
        return declared_cost(spec.inner_a, n) + declared_cost(spec.inner_b, n)
    if isinstance(spec, HSumCompose):
        d2 = spec.effective_sparsity()
        q = Quantizer(n=spec.d, eps=spec.gamma, D=d2)
        header = d2 * (_index_bits(spec.d) + q.value_bits)
        inner = max(
            declared_cost(p, d) for p, d in zip(spec.inner_parts, spec.dims)
        )
        return header + d2 * spec.repeat_count() * inner
    if isinstance(spec, EmbedReduce):
        return declared_cost(spec.inner, spec.embedding.target_dim)
    if isinstance(spec, VertexSample):
        m = spec.polytope.with_vertices().num_vertices()
        return spec.sample_count() * _index_bits(m)
    raise TypeError(f"unknown protocol node {spec!r}")


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

class _Run:
    """Mutable per-execution state: message log and role orientation."""

    def __init__(self):
        self.messages: list = []
        self.clipped = 0

    def send(self, sender_is_alice: bool, bits: int, payload: int) -> None:
        self.messages.append(
            Message(sender=ALICE if sender_is_alice else BOB,
                    bits=bits, payload=payload)
        )


def run_protocol(spec: ProtocolSpec, v, w, rng) -> ProtocolOutcome:
    """Execute the protocol on (v, w) and account every transmitted bit.

    The estimate is clamped to 1 + eps + eps/4 in magnitude (the true
    inner product is at most 1 under the norm preconditions, and the
    quantization slack is eps/4).  Raises if the transcript ever exceeds
    ``declared_cost``.
    """
    v = as_vector(v)
    w = as_vector(w)
    state = _Run()
    est, trace = _run(spec, v, w, rng, state, flipped=False)

    eps = declared_eps(spec)
    bound = 1.0 + eps + eps / 4.0
    clamped = float(np.clip(est, -bound, bound))
    quant = None
    base = spec
    while isinstance(base, Swap):
        base = base.inner
    if isinstance(base, OneWaySparsify):
        quant = _one_way_quantizer(base, v.size).meta()
    transcript = Transcript(messages=tuple(state.messages), quantizer=quant)
    cost = declared_cost(spec, v.size)
    if transcript.total_bits > cost:
        raise AssertionError(
            f"transcript used {transcript.total_bits} bits, declared {cost}"
        )
    trace = dict(trace)
    trace["clipped_values"] = state.clipped
    return ProtocolOutcome(estimate=clamped, transcript=transcript, trace=trace)


def _run(spec, v, w, rng, state: _Run, flipped: bool):
    if isinstance(spec, OneWaySparsify):
        return _run_one_way(spec, v, w, rng, state, flipped)
    if isinstance(spec, Swap):
        return _run(spec.inner, w, v, rng, state, not flipped)
    if isinstance(spec, MaxSplit):
        return _run_max_split(spec, v, w, rng, state, flipped)
    if isinstance(spec, HSumCompose):
        return _run_hsum(spec, v, w, rng, state, flipped)
    if isinstance(spec, EmbedReduce):
        return _run_embed(spec, v, w, rng, state, flipped)
    if isinstance(spec, VertexSample):
        return _run_vertex_sample(spec, v, w, rng, state, flipped)
    raise TypeError(f"unknown protocol node {spec!r}")


def _sparsify_for_space(space: NormSpec, spec: SparsifierSpec, v, rng) -> SparseVector:
    """Sparsify under a possibly scaled norm: scaled balls rescale into the
    base sampler and back, preserving the (eps, delta, D) contract."""
    if isinstance(space, Scaled):
        inner = _sparsify_for_space(space.inner, spec, space.c * v, rng)
        return SparseVector(dim=inner.dim, idx=inner.idx, val=inner.val / space.c)
    return sparsify(v, spec, rng)


def _check_sender_norm(space: NormSpec, v: np.ndarray) -> None:
    try:
        nv = eval_norm(space, v)
    except (ValueError, TypeError):
        return
    if nv > 1 + 1e-6:
        raise ValueError(f"sender vector has norm {nv:.6f} > 1 under its space")


def _run_one_way(spec: OneWaySparsify, v, w, rng, state: _Run, flipped: bool):
    _check_sender_norm(spec.space, v)
    phi = _sparsify_for_space(spec.space, spec.sparsifier, v, rng)
    q = _one_way_quantizer(spec, v.size)
    idx_bits = _index_bits(v.size)

    payload = 0
    bits = 0
    deq_vals = []
    for i, x in zip(phi.idx, phi.val):
        if abs(x) > q.guard:
            # astronomically rare heavy draw: saturate and record
            state.clipped += 1
            x = math.copysign(q.guard, x)
        code = q.encode(x)
        payload = (payload << idx_bits) | int(i)
        payload = (payload << q.value_bits) | (code + q.max_code)
        bits += idx_bits + q.value_bits
        deq_vals.append(q.decode(code))
    state.send(not flipped, bits, payload)

    deq = SparseVector(dim=phi.dim, idx=phi.idx, val=np.array(deq_vals))
    estimate = deq.dot(w) if deq.idx.size else 0.0
    trace = {"kind": "one_way", "sparsity": int(phi.idx.size),
             "message_bits": bits}
    return estimate, trace


def _run_max_split(spec: MaxSplit, v, w, rng, state: _Run, flipped: bool):
    split = split_max_dual(w, spec.a, spec.b)
    estimate = 0.0
    children = []
    for budget, piece, inner in (
        (split.budget1, split.w1, spec.inner_a),
        (split.budget2, split.w2, spec.inner_b),
    ):
        if budget <= 1e-12:
            children.append({"budget": budget, "skipped": True})
            continue
        est, tr = _run(inner, v, piece / budget, rng, state, flipped)
        estimate += budget * est
        children.append({"budget": budget, "estimate": est, "trace": tr})
    trace = {"kind": "max_split", "children": children}
    return estimate, trace


def _run_hsum(spec: HSumCompose, v, w, rng, state: _Run, flipped: bool):
    from .norms import HSum

    space = HSum(h=spec.h, parts=spec.parts, dims=spec.dims)
    blocks_v = space.split(as_vector(v))
    blocks_w = space.split(as_vector(w))

    q_vec = np.array([eval_norm(p, b) for p, b in zip(spec.parts, blocks_v)])
    phi_q = sparsify(q_vec, spec.h_sparsifier, rng) if np.any(q_vec) else \
        SparseVector(dim=spec.d, idx=np.array([], dtype=np.int64), val=np.array([]))

    quant = Quantizer(n=spec.d, eps=spec.gamma, D=spec.effective_sparsity())
    idx_bits = _index_bits(spec.d)
    payload = 0
    bits = 0
    deq_vals = []
    for i, x in zip(phi_q.idx, phi_q.val):
        if abs(x) > quant.guard:
            state.clipped += 1
            x = math.copysign(quant.guard, x)
        code = quant.encode(x)
        payload = (payload << idx_bits) | int(i)
        payload = (payload << quant.value_bits) | (code + quant.max_code)
        bits += idx_bits + quant.value_bits
        deq_vals.append(quant.decode(code))
    state.send(not flipped, bits, payload)

    reps = spec.repeat_count()
    duals = [p.dual() for p in spec.parts]
    estimate = 0.0
    block_traces = []
    for j, i in enumerate(phi_q.idx):
        i = int(i)
        qi = q_vec[i]
        vi = blocks_v[i] / qi
        nw = eval_norm(duals[i], blocks_w[i])
        wi = blocks_w[i] / nw if nw > 0 else np.zeros(spec.dims[i])
        inner_estimates = []
        for _ in range(reps):
            est, _tr = _run(spec.inner_parts[i], vi, wi, rng, state, flipped)
            inner_estimates.append(est)
        tau = float(np.median(inner_estimates))
        estimate += deq_vals[j] * nw * tau
        block_traces.append({"block": i, "tau": tau, "w_norm": nw,
                             "phi_q": deq_vals[j]})
    trace = {"kind": "hsum", "support": [int(i) for i in phi_q.idx],
             "repeats": reps, "blocks": block_traces}
    return estimate, trace


def _run_embed(spec: EmbedReduce, v, w, rng, state: _Run, flipped: bool):
    emb = spec.embedding
    alpha = emb.distortion
    v_target = emb.matrix @ as_vector(v)
    lifted = lift_dual_vector(emb, w)
    est, tr = _run(spec.inner, v_target, lifted / alpha, rng, state, flipped)
    trace = {"kind": "embed_reduce", "alpha": alpha, "inner": tr}
    return alpha * est, trace


def _run_vertex_sample(spec: VertexSample, v, w, rng, state: _Run, flipped: bool):
    P = spec.polytope.with_vertices()
    lam = polytopes.convex_decompose(P, v)
    total = lam.sum()
    if total <= 0:
        raise ValueError("degenerate decomposition")
    lam = lam / total
    t = spec.sample_count()
    ids = rng.choice(len(lam), size=t, p=lam)

    m = P.num_vertices()
    idx_bits = _index_bits(m)
    payload = 0
    for i in ids:
        payload = (payload << idx_bits) | int(i)
    state.send(not flipped, t * idx_bits, payload)

    estimate = float(np.mean(P.vrep[ids] @ as_vector(w)))
    trace = {"kind": "vertex_sample", "samples": t, "vertices": m}
    return estimate, trace


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def lp_one_way(p: float, eps: float, delta: float = 1 / 3,
               constant: float = sparsifiers.LP_SAMPLE_CONSTANT,
               sample_cap: int | None = None) -> OneWaySparsify:
    """One-way protocol for an l_p-bounded sender."""
    return OneWaySparsify(
        sparsifier=sparsifiers.lp_sampling(p, eps, delta=delta,
                                           constant=constant,
                                           sample_cap=sample_cap),
        space=Lp(p),
    )


def topk_protocol(n: int, k: int, eps: float, delta: float = 1 / 3,
                  sample_cap: int | None = None) -> ProtocolSpec:
    """Protocol for a top-k-norm-bounded sender.

    The dual of the top-k norm is max(linf, l1/k), so the roles are
    swapped and the dual side splits through the clamp decomposition.
    Each child runs at failure delta/2 and accuracy eps; the split
    budgets make the child errors add to at most eps.
    """
    child_delta = delta / 2
    linf_side = Swap(lp_one_way(1.0, eps, delta=child_delta,
                                sample_cap=sample_cap))
    scaled_l1 = Scaled(Lp(1), 1.0 / k)
    l1k_side = OneWaySparsify(
        sparsifier=sparsifiers.lp_sampling(1.0, eps, delta=child_delta,
                                           sample_cap=sample_cap),
        space=scaled_l1,
    )
    return Swap(MaxSplit(a=Lp(math.inf), b=scaled_l1,
                         inner_a=linf_side, inner_b=l1k_side))


def hsum_compose_protocol(parts: tuple, dims: tuple, inner_parts: tuple,
                          gamma: float, h_delta: float = 1 / 9,
                          h_constant: float = sparsifiers.LP_SAMPLE_CONSTANT,
                          h_sample_cap: int | None = None) -> HSumCompose:
    """l1-sum composition: sparsify block norms at accuracy gamma, then run
    the block protocols median-amplified.

    The inner protocols should be built at failure <= 1/6 so that the
    median over ceil(4*log2(D2+2)) repeats keeps the union bound over the
    support within the 1/9 failure budget.
    """
    h_spars = sparsifiers.lp_sampling(1.0, gamma, delta=h_delta,
                                      constant=h_constant,
                                      sample_cap=h_sample_cap)
    return HSumCompose(h=Lp(1), parts=tuple(parts), dims=tuple(dims),
                       h_sparsifier=h_spars, inner_parts=tuple(inner_parts))


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def protocol_to_json(spec: ProtocolSpec) -> dict:
    if isinstance(spec, OneWaySparsify):
        return {"type": "one_way",
                "sparsifier": sparsifiers.sparsifier_to_json(spec.sparsifier),
                "space": norms.spec_to_json(spec.space)}
    if isinstance(spec, Swap):
        return {"type": "swap", "inner": protocol_to_json(spec.inner)}
    if isinstance(spec, MaxSplit):
        return {"type": "max_split",
                "a": norms.spec_to_json(spec.a),
                "b": norms.spec_to_json(spec.b),
                "inner_a": protocol_to_json(spec.inner_a),
                "inner_b": protocol_to_json(spec.inner_b)}
    if isinstance(spec, HSumCompose):
        return {"type": "hsum",
                "h": norms.spec_to_json(spec.h),
                "parts": [norms.spec_to_json(p) for p in spec.parts],
                "dims": list(spec.dims),
                "h_sparsifier": sparsifiers.sparsifier_to_json(spec.h_sparsifier),
                "inner": [protocol_to_json(p) for p in spec.inner_parts],
                "repeats": spec.repeats}
    if isinstance(spec, EmbedReduce):
        return {"type": "embed",
                "embedding": spaces.embedding_to_json(spec.embedding),
                "inner": protocol_to_json(spec.inner)}
    if isinstance(spec, VertexSample):
        return {"type": "vertex_sample",
                "polytope": polytopes.polytope_to_json(spec.polytope),
                "eps": spec.eps,
                "sample_constant": spec.sample_constant}
    raise TypeError(f"unknown protocol node {spec!r}")


def protocol_from_json(doc: dict | str) -> ProtocolSpec:
    if isinstance(doc, str):
        doc = json.loads(doc)
    t = doc["type"]
    if t == "one_way":
        return OneWaySparsify(
            sparsifier=sparsifiers.sparsifier_from_json(doc["sparsifier"]),
            space=norms.spec_from_json(doc["space"]))
    if t == "swap":
        return Swap(protocol_from_json(doc["inner"]))
    if t == "max_split":
        return MaxSplit(a=norms.spec_from_json(doc["a"]),
                        b=norms.spec_from_json(doc["b"]),
                        inner_a=protocol_from_json(doc["inner_a"]),
                        inner_b=protocol_from_json(doc["inner_b"]))
    if t == "hsum":
        return HSumCompose(
            h=norms.spec_from_json(doc["h"]),
            parts=tuple(norms.spec_from_json(p) for p in doc["parts"]),
            dims=tuple(doc["dims"]),
            h_sparsifier=sparsifiers.sparsifier_from_json(doc["h_sparsifier"]),
            inner_parts=tuple(protocol_from_json(p) for p in doc["inner"]),
            repeats=doc.get("repeats"))
    if t == "embed":
        return EmbedReduce(embedding=spaces.embedding_from_json(doc["embedding"]),
                           inner=protocol_from_json(doc["inner"]))
    if t == "vertex_sample":
        return VertexSample(polytope=polytopes.polytope_from_json(doc["polytope"]),
                            eps=float(doc["eps"]),
                            sample_constant=float(doc.get("sample_constant",
                                                          VERTEX_SAMPLE_CONSTANT)))
    raise ValueError(f"unknown protocol type {t!r}")
