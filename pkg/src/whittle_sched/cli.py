"""Command-line entry point: ``whittle-sched {index,oracle,bound,simulate,sweep}``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import csvio
from .config import ConfigError, ExperimentConfig, parse_config
from .mdp import TruncatedMdp, certify_structure, evaluate_threshold_policy, numeric_whittle_index, value_iteration
from .model import InvalidInputError
from .policies import POLICY_NAMES, PolicyKind
from .relaxed import lagrangian_lower_bound
from .sim import run, scale_config, sweep
from .whittle import IndexTable, index_discounted


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _policy_list(text: str) -> list[str]:
    names = [x.strip() for x in text.split(",") if x.strip()]
    bad = [n for n in names if n not in POLICY_NAMES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown policy {bad[0]!r}; choose from {', '.join(POLICY_NAMES)}")
    return names


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="whittle-sched", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, *extra):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment file or preset name (fig1, fig2, small)")
        p.add_argument("--out", help="output directory (overrides the config's output)")
        for flag in extra:
            if flag == "seed":
                p.add_argument("--seed", type=_u64, help="override the config seed")
            elif flag == "beta":
                p.add_argument("--beta", type=float, help="discount factor in (0, 1)")
            elif flag == "n":
                p.add_argument("--n", type=_int_list, required=name == "sweep", help="population sizes, e.g. 10,20,40")
            elif flag == "policy":
                p.add_argument("--policy", type=_policy_list, help="comma-separated policies")
        return p

    add("index", "dump the index table", "beta")
    add("oracle", "compare closed-form indices with the MDP oracle", "beta")
    add("bound", "relaxed-problem lower bound", "n")
    add("simulate", "simulate the configured system", "seed", "beta", "policy")
    add("sweep", "simulate across population sizes", "seed", "beta", "policy", "n")
    return parser


def _emit(out_dir: Path | None, name: str, text: str) -> None:
    if out_dir is None:
        sys.stdout.write(text)
    else:
        path = csvio.write_atomic(out_dir / name, text)
        print(f"wrote {path}")


def _kinds(exp: ExperimentConfig, args) -> list[PolicyKind]:
    names = getattr(args, "policy", None) or exp.policies
    beta = getattr(args, "beta", None)
    return [PolicyKind(n, beta if n == "wi" else None) for n in names]


def cmd_index(exp, args, out_dir):
    tables = [IndexTable(exp.classes, "limit")]
    beta = args.beta if args.beta is not None else exp.beta
    if beta is not None:
        tables.append(IndexTable(exp.classes, "discounted", beta))
    rows = []
    for table in tables:
        for k, c in enumerate(exp.classes):
            for n in range(2 * c.R + 1):
                rows.append((c.class_id, n, table.index(k, n), table.label))
    _emit(out_dir, "index.csv", csvio.render(["class_id", "n", "index", "mode"], rows))


def cmd_oracle(exp, args, out_dir):
    beta = args.beta if args.beta is not None else exp.beta
    if beta is None:
        raise InvalidInputError("oracle needs --beta or a beta entry in the config")
    rows, worst = [], 0.0
    for c in exp.classes:
        for n in range(c.R + 4):
            closed = index_discounted(n, beta, c)
            numeric = numeric_whittle_index(c, n, beta)
            mdp = TruncatedMdp(c, closed, beta)
            report = certify_structure(value_iteration(mdp), evaluate_threshold_policy(mdp, n))
            err = abs(numeric - closed)
            worst = max(worst, err)
            rows.append((c.class_id, c.a, c.R, beta, n, closed, numeric, err,
                         report.monotone, report.r_convex, report.submodular))
    header = ["class_id", "a", "R", "beta", "n", "closed_form_index", "numeric_index", "abs_error",
              "monotone", "r_convex", "submodular"]
    _emit(out_dir, "oracle.csv", csvio.render(header, rows))
    print(f"max abs_error {worst:.3e}", file=sys.stderr)


def cmd_bound(exp, args, out_dir):
    base, notes = exp.system()
    sizes = args.n or [base.N]
    rows = []
    for N in sizes:
        cfg, why = scale_config(base, N)
        notes += why
        sol = lagrangian_lower_bound(cfg)
        for a in sol.allocations:
            rows.append((N, cfg.M, sol.W_star, a.class_id, a.count, a.lower, a.upper, a.weight_lower,
                         a.activation, sol.lower_bound_cost))
        print(f"N={N} M={cfg.M}: W*={sol.W_star:.6g} lower bound per user {sol.lower_bound_cost:.6g} "
              f"(servers used {sol.achieved_activation:.6g})", file=sys.stderr)
    for note in notes:
        print(f"note: {note}", file=sys.stderr)
    header = ["N", "M", "W_star", "class_id", "count", "threshold_lower", "threshold_upper", "weight_lower",
              "activation", "lower_bound_cost"]
    _emit(out_dir, "bound.csv", csvio.render(header, rows))


def _summary_rows(results):
    return [(r.policy, r.N, r.M, len(r.rep_means), r.mean, r.stderr, r.slots, r.seed) for r in results]


SUMMARY_HEADER = ["policy", "N", "M", "replications", "mean", "stderr", "slots", "seed"]


def cmd_simulate(exp, args, out_dir):
    cfg, notes = exp.system(args.seed)
    results = [run(cfg, k) for k in _kinds(exp, args)]
    reps = [(r.policy, r.N, r.M, i, m) for r in results for i, m in enumerate(r.rep_means)]
    _emit(out_dir, "replications.csv", csvio.render(["policy", "N", "M", "replication", "mean_cost"], reps))
    _emit(out_dir, "summary.csv", csvio.render(SUMMARY_HEADER, _summary_rows(results)))
    for note in notes:
        print(f"note: {note}", file=sys.stderr)
    for r in results:
        print(f"{r.policy}: cost per user {r.mean:.6g} +/- {r.stderr:.2g} (N={r.N}, M={r.M})", file=sys.stderr)


def cmd_sweep(exp, args, out_dir):
    cfg, notes = exp.system(args.seed)
    kinds = _kinds(exp, args)
    result = sweep(cfg, args.n, kinds)
    summary, reps = [], []
    for row in result.rows:
        for label, r in row.results.items():
            gap = (r.mean - row.lower_bound) / row.lower_bound
            summary.append((label, row.N, row.M, len(r.rep_means), r.mean, r.stderr, r.slots, r.seed,
                            row.lower_bound, gap))
            reps.extend((label, row.N, row.M, i, m) for i, m in enumerate(r.rep_means))
    header = SUMMARY_HEADER + ["lower_bound", "relative_gap"]
    _emit(out_dir, "sweep_replications.csv", csvio.render(["policy", "N", "M", "replication", "mean_cost"], reps))
    _emit(out_dir, "sweep_summary.csv", csvio.render(header, summary))
    for note in notes + result.notes:
        print(f"note: {note}", file=sys.stderr)
    wi = next((k.label for k in kinds if k.name == "wi"), None)
    if wi is not None and len(result.rows) > 1:
        first, last = result.rows[0], result.rows[-1]
        verdict = "shrinks" if result.gap_shrinks(wi) else "does not shrink"
        print(f"gap trend: {wi} relative gap {first.gap(wi):.4g} at N={first.N} -> {last.gap(wi):.4g} "
              f"at N={last.N}: {verdict}")


COMMANDS = {"index": cmd_index, "oracle": cmd_oracle, "bound": cmd_bound,
            "simulate": cmd_simulate, "sweep": cmd_sweep}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        exp = parse_config(args.config)
        out = args.out or exp.output
        COMMANDS[args.command](exp, args, Path(out) if out else None)
    except (ConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any failure is a nonzero exit with a diagnostic
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
