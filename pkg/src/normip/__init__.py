"""normip: inner product estimation under norm constraints.

Sparsifiers, two-party protocol simulation with bit-exact transcripts,
dual-norm brute-force oracles, polytope gauges, and a seeded Monte-Carlo
harness.
"""

from .norms import (
    DualOf, HSum, Lp, MaxOf, NormSpec, PolytopeGauge, Scaled, SymmetricOracle,
    TopK, audit_normalization, audit_symmetry, dual_exponent,
    dual_norm_bruteforce, eval_norm, lp_norm, spec_from_json, spec_to_json,
    topk_dual_norm, topk_norm,
)
from .polytopes import (
    Polytope, convex_decompose, cross_polytope, cube, dual_polytope,
    gauge_norm, slack_in_expectation, slack_matrix, vertex_sampling_protocol,
)
from .protocols import (
    EmbedReduce, HSumCompose, MaxSplit, OneWaySparsify, ProtocolOutcome,
    Swap, Transcript, VertexSample, declared_cost, declared_delta,
    declared_eps, lp_one_way, quantize_value, run_protocol, topk_protocol,
)
from .sparsifiers import (
    SamplingDistribution, SparsifierSpec, dense, draw_one_sparse, level_set,
    levelset_distribution, lp_distribution, lp_sampling, lp_sparsify,
    sparsify, symmetric_sparsify, weak_qnorm_estimate,
)
from .spaces import (
    Embedding, MaxDualSplit, dual_spec, lift_dual_vector,
    linf_into_lp_embedding, split_max_dual, topk_decompose,
)
from .vectors import SparseVector

__version__ = "0.1.0"
