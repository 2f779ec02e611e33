"""Monte-Carlo experiment runner: hard-instance generators, adversarial
dual-vector search, batched sparsifier trials, deterministic seeded sweeps
with CSV/JSON artifacts, and the invariant suite behind ``normip verify``.

Seeding contract: every random draw comes from a numpy Generator seeded by
``substream_seed(master, *labels)``, a splitmix64 mix of the master seed
with the cell name and trial index.  Identical master seed and config give
byte-identical report JSON; wall-clock timings are kept out of the
canonical serialization and go to a separate log.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from . import norms, protocols, sparsifiers, spaces
from .norms import Lp, NormSpec, eval_norm, lp_norm
from .vectors import as_vector

__all__ = [
    "substream_seed", "TrialReport", "GapHammingInstance",
    "gen_index_instance", "gen_gap_hamming", "random_dual_pair",
    "decay_ball_vector", "adversarial_dual_search", "AdversarialSearchResult",
    "sparsifier_error_batch", "CellConfig", "SweepConfig", "run_sweep",
    "run_protocol_cell", "verify_all",
]


# ---------------------------------------------------------------------------
# seeding
# ---------------------------------------------------------------------------

_MASK = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _label_u64(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & _MASK
    digest = hashlib.blake2b(str(label).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream_seed(master: int, *labels) -> int:
    """64-bit substream seed: splitmix64 chain over (master, labels...)."""
    h = _splitmix64(int(master) & _MASK)
    for lab in labels:
        h = _splitmix64(h ^ _label_u64(lab))
    return h


def substream(master: int, *labels) -> np.random.Generator:
    return np.random.default_rng(substream_seed(master, *labels))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class TrialReport:
    """Aggregate of one experiment cell.

    ``wall_time_s`` is measured but excluded from the canonical JSON so
    repeated runs under one master seed serialize byte-identically.
    """

    cell: str
    spec_fingerprint: str
    master_seed: int
    eps: float
    trials: int
    errors: list
    bits: list
    sparsity: list
    success_rate: float
    mean_error: float
    var_error: float
    p95_abs_error: float
    extra: dict = field(default_factory=dict)
    wall_time_s: float = 0.0

    @classmethod
    def from_samples(cls, cell, fingerprint, master_seed, eps, errors,
                     bits=(), sparsity=(), extra=None, wall_time_s=0.0):
        z = np.asarray(errors, dtype=np.float64)
        return cls(
            cell=cell,
            spec_fingerprint=fingerprint,
            master_seed=int(master_seed),
            eps=float(eps),
            trials=int(z.size),
            errors=[float(x) for x in z],
            bits=[int(b) for b in bits],
            sparsity=[int(s) for s in sparsity],
            success_rate=float(np.mean(np.abs(z) <= eps)) if z.size else 0.0,
            mean_error=float(z.mean()) if z.size else 0.0,
            var_error=float(z.var()) if z.size else 0.0,
            p95_abs_error=float(np.percentile(np.abs(z), 95)) if z.size else 0.0,
            extra=extra or {},
            wall_time_s=wall_time_s,
        )

    def to_json(self) -> dict:
        doc = {
            "cell": self.cell,
            "spec_fingerprint": self.spec_fingerprint,
            "master_seed": self.master_seed,
            "eps": self.eps,
            "trials": self.trials,
            "errors": self.errors,
            "bits": self.bits,
            "sparsity": self.sparsity,
            "success_rate": self.success_rate,
            "mean_error": self.mean_error,
            "var_error": self.var_error,
            "p95_abs_error": self.p95_abs_error,
            "extra": self.extra,
        }
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "TrialReport":
        rep = cls(wall_time_s=0.0, **doc)
        z = np.asarray(rep.errors)
        recomputed = float(np.mean(np.abs(z) <= rep.eps)) if z.size else 0.0
        if abs(recomputed - rep.success_rate) > 1e-12:
            raise ValueError("stored success_rate disagrees with error samples")
        return rep


def spec_fingerprint(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.blake2b(blob, digest_size=12).hexdigest()


# ---------------------------------------------------------------------------
# hard instances
# ---------------------------------------------------------------------------

def gen_index_instance(n: int, x, i: int):
    """Bit-retrieval pair for the max-norm problem: v holds the bits,
    w = e_i reads one out, so <v, w> = x_i exactly.  0-indexed."""
    x = np.asarray(x)
    if x.shape != (n,) or not np.all((x == 0) | (x == 1)):
        raise ValueError("x must be an n-bit 0/1 vector")
    if not 0 <= i < n:
        raise ValueError("index out of range")
    v = x.astype(np.float64)
    w = np.zeros(n)
    w[i] = 1.0
    assert lp_norm(v, math.inf) <= 1 + 1e-12 and lp_norm(w, 1) <= 1 + 1e-12
    return v, w


@dataclass(frozen=True)
class GapHammingInstance:
    x: np.ndarray
    y: np.ndarray
    label: str  # "low" or "high"
    delta: int
    v: np.ndarray
    w: np.ndarray


def gen_gap_hamming(k: int, C: float, rng, p: float = 2.0) -> GapHammingInstance:
    """Planted gap instance: binary x, y with Hamming distance conditioned
    outside (k/2 - C sqrt(k), k/2 + C sqrt(k)).

    The conditional law of the distance given x is Binomial(k, 1/2), so we
    sample the distance exactly from the tail-restricted binomial and flip
    a uniform subset of that size; this matches rejection sampling without
    its unbounded running time.
    """
    if k < 4 * C * C:
        raise ValueError("need k >= 4 C^2 for a nonempty gap")
    lo = k / 2 - C * math.sqrt(k)
    hi = k / 2 + C * math.sqrt(k)
    support = np.arange(k + 1)
    pmf = scipy.stats.binom.pmf(support, k, 0.5)
    mask = (support <= lo) | (support >= hi)
    if pmf[mask].sum() <= 0:
        raise ValueError("gap condition has zero probability mass")
    tail_pmf = np.where(mask, pmf, 0.0)
    tail_pmf /= tail_pmf.sum()

    x = rng.integers(0, 2, size=k)
    delta = int(rng.choice(support, p=tail_pmf))
    flips = rng.choice(k, size=delta, replace=False)
    y = x.copy()
    y[flips] ^= 1

    label = "low" if delta <= lo else "high"
    # distance identity on integers, asserted exactly
    assert delta == int(x @ x) + int(y @ y) - 2 * int(x @ y)

    q = norms.dual_exponent(p)
    xf, yf = x.astype(np.float64), y.astype(np.float64)
    nv = lp_norm(xf, p)
    nw = lp_norm(yf, q)
    v = xf / nv if nv > 0 else xf
    w = yf / nw if nw > 0 else yf
    return GapHammingInstance(x=x, y=y, label=label, delta=delta, v=v, w=w)


def random_dual_pair(spec: NormSpec, n: int, rng,
                     radius_range=(0.3, 1.0)):
    """Random (v, w) with ||v||_spec <= 1 and ||w||_spec* <= 1."""
    v = rng.standard_normal(n)
    v *= rng.uniform(*radius_range) / eval_norm(spec, v)
    dual = spaces.dual_spec(spec)
    w = rng.standard_normal(n)
    w *= rng.uniform(*radius_range) / eval_norm(dual, w)
    assert eval_norm(spec, v) <= 1 + 1e-12
    assert eval_norm(dual, w) <= 1 + 1e-12
    return v, w


def decay_ball_vector(spec: NormSpec, n: int, rng, ratio_range=(0.35, 0.7),
                      radius_range=(0.3, 1.0)) -> np.ndarray:
    """Random ball vector with geometrically decaying magnitude profile.

    Consecutive magnitude ratios at most ``ratio_range[1]`` keep every
    dyadic magnitude band small, the regime in which level-set sampling
    admits subset bounds (vectors with heavy magnitude-level multiplicity
    contain large isometric max-norm copies and fall outside it).
    """
    ratios = rng.uniform(*ratio_range, size=n - 1)
    mags = np.concatenate([[1.0], np.cumprod(ratios)])
    v = mags * rng.choice([-1.0, 1.0], size=n)
    v = rng.permutation(v)
    return v / eval_norm(spec, v) * rng.uniform(*radius_range)


# ---------------------------------------------------------------------------
# batched sparsifier trials
# ---------------------------------------------------------------------------

def sparsifier_error_batch(v, w, spec, rng, trials: int,
                           chunk: int = 500) -> np.ndarray:
    """Errors <phi(v), w> - <v, w> over many independent sparsifier draws.

    Vectorized equivalent of repeated lp_sparsify calls: the merge step
    commutes with the inner product, so per-trial errors only need the
    sampled coordinate values.
    """
    v = as_vector(v)
    w = as_vector(w)
    if spec.kind != "lp":
        raise ValueError("batch runner supports the lp kind only")
    nv = lp_norm(v, spec.p)
    if nv == 0:
        return np.zeros(trials)
    u = v / nv
    dist = sparsifiers.lp_distribution(u, spec.p)
    exact = float(v @ w)
    contrib = np.zeros(v.size)
    support = dist.probs > 0
    contrib[support] = nv * u[support] / dist.probs[support] * w[support]
    s = spec.sample_count
    out = np.empty(trials)
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        samples = rng.choice(v.size, size=(m, s), p=dist.probs)
        out[done:done + m] = contrib[samples].mean(axis=1) - exact
        done += m
    return out


# ---------------------------------------------------------------------------
# adversarial dual search
# ---------------------------------------------------------------------------

@dataclass
class AdversarialSearchResult:
    w: np.ndarray
    failure_rate: float
    candidates: list  # (w, failure_rate) sorted worst first


def _dual_candidates(spec: NormSpec, v: np.ndarray, rng, budget: int) -> list:
    """Dual-ball extreme points aimed at the sampler's weak spots."""
    n = v.size
    dual = spaces.dual_spec(spec)
    cands = []

    def push(w):
        w = np.asarray(w, dtype=np.float64)
        if not np.any(w):
            return
        nw = eval_norm(dual, w)
        if nw > 0:
            cands.append(w / nw)

    sign_v = np.where(v >= 0, 1.0, -1.0)
    push(sign_v)
    push(-sign_v)
    if isinstance(spec, Lp) and not math.isinf(spec.p):
        # Hoelder extremizer of <v, .> in the dual ball
        a = np.abs(v)
        push(np.sign(v) * a ** (spec.p - 1.0) if np.any(a) else sign_v)
    order = np.argsort(-np.abs(v))
    m = 1
    while m <= n:
        w = np.zeros(n)
        w[order[:m]] = sign_v[order[:m]]
        push(w)
        w2 = np.zeros(n)
        w2[order[-m:]] = sign_v[order[-m:]]
        push(w2)
        m *= 2
    nonzero = np.flatnonzero(v)
    if nonzero.size:
        j_max = nonzero[np.argmax(np.abs(v[nonzero]))]
        j_min = nonzero[np.argmin(np.abs(v[nonzero]))]
        for j in (j_max, j_min):
            w = np.zeros(n)
            w[j] = sign_v[j]
            push(w)
    while len(cands) < budget:
        push(rng.choice([-1.0, 1.0], size=n) * rng.uniform(0.2, 1.0, size=n))
    return cands[:budget]


def adversarial_dual_search(spec: NormSpec, v, sparsifier_spec, budget: int,
                            rng, probe_trials: int = 150) -> AdversarialSearchResult:
    """Search dual-ball candidates for the w with the worst empirical
    success rate under the given sparsifier.  Best effort: the returned
    rate is the measured failure over ``probe_trials`` draws."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    v = as_vector(v)
    eps = sparsifier_spec.epsilon
    base = int(rng.integers(1 << 62))
    scored = []
    for j, w in enumerate(_dual_candidates(spec, v, rng, budget)):
        errs = sparsifier_error_batch(
            v, w, sparsifier_spec,
            np.random.default_rng(substream_seed(base, "probe", j)),
            probe_trials)
        scored.append((float(np.mean(np.abs(errs) > eps)), w))
    scored.sort(key=lambda t: -t[0])
    cands = [(w, r) for r, w in scored]
    return AdversarialSearchResult(w=cands[0][0], failure_rate=cands[0][1],
                                   candidates=cands)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass
class CellConfig:
    name: str
    eps: float
    trials: int
    protocol: dict
    instance: dict

    def to_json(self) -> dict:
        return {"name": self.name, "eps": self.eps, "trials": self.trials,
                "protocol": self.protocol, "instance": self.instance}

    @classmethod
    def from_json(cls, doc: dict) -> "CellConfig":
        return cls(name=doc["name"], eps=float(doc["eps"]),
                   trials=int(doc["trials"]), protocol=doc["protocol"],
                   instance=doc["instance"])


@dataclass
class SweepConfig:
    master_seed: int
    cells: list

    def to_json(self) -> dict:
        return {"master_seed": self.master_seed,
                "cells": [c.to_json() for c in self.cells]}

    @classmethod
    def from_json(cls, doc: dict | str) -> "SweepConfig":
        if isinstance(doc, str):
            doc = json.loads(doc)
        return cls(master_seed=int(doc["master_seed"]),
                   cells=[CellConfig.from_json(c) for c in doc["cells"]])


def _instance_pair(instance: dict, rng):
    kind = instance["kind"]
    if kind == "fixed":
        return as_vector(instance["v"]), as_vector(instance["w"])
    if kind == "random_dual_pair":
        spec = norms.spec_from_json(instance["spec"])
        return random_dual_pair(spec, int(instance["n"]), rng)
    if kind == "index":
        n = int(instance["n"])
        x = rng.integers(0, 2, size=n)
        i = int(rng.integers(0, n))
        return gen_index_instance(n, x, i)
    if kind == "gap_hamming":
        inst = gen_gap_hamming(int(instance["k"]), float(instance["C"]), rng,
                               p=float(instance.get("p", 2.0)))
        return inst.v, inst.w
    raise ValueError(f"unknown instance family {kind!r}")


def run_protocol_cell(cell: CellConfig, master_seed: int) -> TrialReport:
    """Execute one protocol cell: draw the instance, run ``trials``
    independently seeded protocol executions, aggregate."""
    t0 = time.perf_counter()
    spec = protocols.protocol_from_json(cell.protocol)
    v, w = _instance_pair(cell.instance, substream(master_seed, cell.name, "instance"))
    exact = float(np.dot(v, w))
    errors = np.empty(cell.trials)
    bits = []
    sparsity = []
    declared = protocols.declared_cost(spec, v.size)
    for t in range(cell.trials):
        rng = substream(master_seed, cell.name, t)
        out = protocols.run_protocol(spec, v, w, rng)
        errors[t] = out.estimate - exact
        bits.append(out.transcript.total_bits)
        if out.trace.get("kind") == "one_way":
            sparsity.append(out.trace["sparsity"])
    assert all(b <= declared for b in bits)
    extra = {"declared_cost": declared, "exact": exact,
             "declared_eps": protocols.declared_eps(spec),
             "declared_delta": protocols.declared_delta(spec)}
    base = spec
    while isinstance(base, protocols.Swap):
        base = base.inner
    if isinstance(base, protocols.OneWaySparsify):
        extra["sample_count"] = base.sparsifier.sample_count
        extra["sparsity_cap"] = base.sparsifier.sparsity_cap
    return TrialReport.from_samples(
        cell=cell.name,
        fingerprint=spec_fingerprint(cell.protocol),
        master_seed=master_seed,
        eps=cell.eps,
        errors=errors,
        bits=bits,
        sparsity=sparsity,
        extra=extra,
        wall_time_s=time.perf_counter() - t0,
    )


def run_sweep(config: SweepConfig, out_dir: str | None = None) -> dict:
    """Run every cell; optionally write per-cell JSON, a summary CSV and a
    timing log under ``out_dir``.  Deterministic given the master seed."""
    workers = int(os.environ.get("NORMIP_THREADS", "1"))
    reports: dict = {}

    def one(cell: CellConfig):
        try:
            return cell.name, run_protocol_cell(cell, config.master_seed)
        except Exception as exc:  # quarantine, keep sweeping
            return cell.name, exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, config.cells))
    else:
        results = [one(c) for c in config.cells]

    failures = {}
    for name, res in results:
        if isinstance(res, Exception):
            failures[name] = repr(res)
        else:
            reports[name] = res

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for name, rep in reports.items():
            path = os.path.join(out_dir, f"{name}.json")
            with open(path, "w") as fh:
                json.dump(rep.to_json(), fh, sort_keys=True, separators=(",", ":"))
        _write_summary_csv(os.path.join(out_dir, "summary.csv"), reports)
        with open(os.path.join(out_dir, "timings.log"), "w") as fh:
            for name, rep in sorted(reports.items()):
                fh.write(f"{name}\t{rep.wall_time_s:.3f}s\n")
            for name, msg in sorted(failures.items()):
                fh.write(f"{name}\tFAILED\t{msg}\n")

    return {"reports": reports, "failures": failures}


def _write_summary_csv(path: str, reports: dict) -> None:
    import csv as _csv

    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["cell", "eps", "s", "D", "bits_max", "success",
                         "mean_abs_z", "p95_abs_z"])
        for name in sorted(reports):
            rep = reports[name]
            s = rep.extra.get("sample_count", "")
            d = rep.extra.get("sparsity_cap", "")
            z = np.abs(np.asarray(rep.errors))
            writer.writerow([
                name, repr(rep.eps), s, d,
                max(rep.bits) if rep.bits else 0,
                repr(rep.success_rate),
                repr(float(z.mean())) if z.size else "0.0",
                repr(rep.p95_abs_error),
            ])


# ---------------------------------------------------------------------------
# verification suite (CLI `verify`)
# ---------------------------------------------------------------------------

def verify_all(seed: int = 0) -> list:
    """Fast invariant suite; returns (name, passed, detail) triples."""
    checks = []
    rng = np.random.default_rng(seed)

    def check(name, fn):
        try:
            fn()
            checks.append((name, True, ""))
        except Exception as exc:
            checks.append((name, False, repr(exc)))

    def norms_examples():
        assert norms.lp_norm([3, 4], 2) == 5
        assert norms.lp_norm([1, -1, 1], math.inf) == 1
        assert norms.topk_norm([3, 1, 2, 0], 2) == 5
        assert abs(norms.dual_exponent(4) - 4 / 3) < 1e-15

    def topk_identities():
        for _ in range(50):
            v = rng.standard_normal(8)
            assert abs(norms.topk_norm(v, 8) - norms.lp_norm(v, 1)) < 1e-12
            assert abs(norms.topk_norm(v, 1) - norms.lp_norm(v, math.inf)) < 1e-12

    def duality_small():
        for spec in (Lp(1), norms.TopK(2), norms.MaxOf(Lp(math.inf), norms.Scaled(Lp(1), 0.5))):
            dual = spaces.dual_spec(spec)
            for _ in range(40):
                w = rng.standard_normal(4)
                bf = norms.dual_norm_bruteforce(spec, w)
                assert abs(bf.value - eval_norm(dual, w)) <= 1e-9

    def decompose_validator():
        from . import polytopes

        P = polytopes.cube(3).with_vertices()
        for _ in range(20):
            x = rng.uniform(-1, 1, 3)
            lam = polytopes.convex_decompose(P, x)
            assert abs(lam.sum() - 1) < 1e-9
            assert np.linalg.norm(P.vrep.T @ lam - x) < 1e-9

    def quantizer_roundtrip():
        for _ in range(2000):
            x = rng.uniform(-1, 1)
            bits, deq = protocols.quantize_value(x, 64, 0.1, 16)
            q = protocols.Quantizer(n=64, eps=0.1, D=16)
            assert abs(x - deq) <= q.step / 2 + 1e-18

    def protocol_determinism():
        spec = protocols.lp_one_way(2.0, 0.2)
        v = rng.standard_normal(32)
        v /= lp_norm(v, 2)
        w = rng.standard_normal(32)
        w /= lp_norm(w, 2)
        a = protocols.run_protocol(spec, v, w, np.random.default_rng(5))
        b = protocols.run_protocol(spec, v, w, np.random.default_rng(5))
        assert a.transcript == b.transcript and a.estimate == b.estimate

    def sweep_reproducible():
        import tempfile

        cell = CellConfig(
            name="mini", eps=0.2, trials=20,
            protocol=protocols.protocol_to_json(protocols.lp_one_way(1.0, 0.2)),
            instance={"kind": "random_dual_pair", "n": 16,
                      "spec": {"type": "lp", "p": 1}},
        )
        cfg = SweepConfig(master_seed=11, cells=[cell])
        with tempfile.TemporaryDirectory() as d1, tempfile.TemporaryDirectory() as d2:
            run_sweep(cfg, d1)
            run_sweep(cfg, d2)
            b1 = open(os.path.join(d1, "mini.json"), "rb").read()
            b2 = open(os.path.join(d2, "mini.json"), "rb").read()
            assert b1 == b2 and len(b1) > 0

    check("norm examples", norms_examples)
    check("topk identities", topk_identities)
    check("duality small-n", duality_small)
    check("convex decomposition validator", decompose_validator)
    check("quantizer roundtrip", quantizer_roundtrip)
    check("protocol determinism", protocol_determinism)
    check("sweep reproducibility", sweep_reproducible)
    return checks
