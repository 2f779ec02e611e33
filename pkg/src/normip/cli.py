"""Command-line interface.

Subcommands:

* ``run``    one protocol on fixed vectors over many seeds, report JSON out
* ``sweep``  a config file of cells, artifacts to a directory
* ``verify`` the invariant/oracle suite; exit code 0 iff everything passes
* ``oracle`` brute-force dual norms and exact inner products for inputs
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import harness, norms, protocols
from .vectors import load_vector_csv, load_vector_f64


def _load_vector(path: str) -> np.ndarray:
    if path.endswith(".f64") or path.endswith(".bin"):
        return load_vector_f64(path)
    return load_vector_csv(path)


def cmd_run(args) -> int:
    with open(args.spec) as fh:
        spec_doc = json.load(fh)
    v = _load_vector(args.v)
    w = _load_vector(args.w)
    cell = harness.CellConfig(
        name=args.name,
        eps=args.eps if args.eps is not None
        else protocols.declared_eps(protocols.protocol_from_json(spec_doc)),
        trials=args.trials,
        protocol=spec_doc,
        instance={"kind": "fixed", "v": v.tolist(), "w": w.tolist()},
    )
    report = harness.run_protocol_cell(cell, master_seed=args.seed)
    doc = report.to_json()
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        print(f"wrote {args.out} (success_rate={report.success_rate:.4f}, "
              f"bits<= {max(report.bits) if report.bits else 0})")
    else:
        json.dump(doc, sys.stdout, sort_keys=True)
        print()
    return 0


def cmd_sweep(args) -> int:
    with open(args.config) as fh:
        config = harness.SweepConfig.from_json(json.load(fh))
    result = harness.run_sweep(config, out_dir=args.out)
    for name, rep in sorted(result["reports"].items()):
        print(f"{name}: success={rep.success_rate:.4f} "
              f"p95|Z|={rep.p95_abs_error:.4f} trials={rep.trials}")
    for name, msg in sorted(result["failures"].items()):
        print(f"{name}: FAILED {msg}", file=sys.stderr)
    return 1 if result["failures"] else 0


def cmd_verify(args) -> int:
    checks = harness.verify_all(seed=args.seed)
    failed = 0
    for name, ok, detail in checks:
        status = "PASS" if ok else "FAIL"
        line = f"[{status}] {name}"
        if detail:
            line += f"  {detail}"
        print(line)
        failed += not ok
    return 1 if failed else 0


def cmd_oracle(args) -> int:
    with open(args.spec) as fh:
        spec = norms.spec_from_json(json.load(fh))
    if args.w:
        w = _load_vector(args.w)
        res = norms.dual_norm_bruteforce(spec, w, budget=args.budget)
        tag = "exact" if res.exact else "heuristic lower bound"
        print(f"dual norm of w: {res.value!r} ({tag})")
    if args.v:
        v = _load_vector(args.v)
        print(f"primal norm of v: {norms.eval_norm(spec, v)!r}")
    if args.v and args.w:
        v = _load_vector(args.v)
        w = _load_vector(args.w)
        print(f"inner product <v, w>: {float(v @ w)!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="normip",
        description="norm-restricted inner product protocols and oracles")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one protocol cell")
    p_run.add_argument("--spec", required=True, help="protocol spec JSON file")
    p_run.add_argument("--v", required=True, help="sender vector (csv or .f64)")
    p_run.add_argument("--w", required=True, help="receiver vector (csv or .f64)")
    p_run.add_argument("--seed", type=int, default=7)
    p_run.add_argument("--trials", type=int, default=2000)
    p_run.add_argument("--eps", type=float, default=None,
                       help="success threshold (defaults to the declared accuracy)")
    p_run.add_argument("--out", default=None, help="report JSON path")
    p_run.add_argument("--name", default="run")
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a sweep config")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out", default=None, help="artifact directory")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_verify = sub.add_parser("verify", help="run the invariant suite")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.set_defaults(fn=cmd_verify)

    p_oracle = sub.add_parser("oracle", help="brute-force norms and inner products")
    p_oracle.add_argument("--spec", required=True, help="norm spec JSON file")
    p_oracle.add_argument("--v", default=None)
    p_oracle.add_argument("--w", default=None)
    p_oracle.add_argument("--budget", type=int, default=64)
    p_oracle.set_defaults(fn=cmd_oracle)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
