"""
Command-line entry point.

Exit codes: 0 when a cause is found, a check passes or an artifact is
written; 1 when no cause is found or a cause is refuted; 2 on usage or
input errors.

"""

import argparse
import json
import logging
import sys

from fractions import Fraction
from pathlib import Path

from termcolor import colored

from . import __version__
from .abstract_check import (
    AbstractPacQuery,
    discover_abs,
    export_smt_abs,
    subgraph_queries,
)
from .abstraction import (
    abstract,
    enumerate_subgraphs,
    format_signature,
    serialize_abstraction,
)
from .bench import BenchQuery, GenSpec, GenerationBudgetError, compare, generate
from .concrete import PacQuery, check_cause, discover, export_smt
from .config import (
    BENCH_TIMEOUT,
    DEFAULT_JOBS,
    DEFAULT_MAX_ROUNDS,
    DEFAULT_SEED,
    DEFAULT_SPLIT_RATIO,
)
from .model import ModelSyntaxError, ModelValidationError, parse_model, serialize_model
from .predicates import parse_predicate, parse_predicate_set
from .reach import PathGuardExceeded
from .refine import run
from .smt import SmtDecodeError, VerificationMismatchError


logger = logging.getLogger("CLI")

EXIT_FOUND = 0
EXIT_NONE = 1
EXIT_ERROR = 2

# Options a query file may set; it wins over the command line.
QUERY_KEYS = (
    "effect",
    "contingencies",
    "predicates",
    "roots",
    "root_policy",
    "candidate_policy",
    "max_subset_size",
    "se_mode",
    "w_strategy",
    "alpha",
    "max_rounds",
)


def _split(values) -> list[str]:
    parts = []
    for value in values or []:
        parts.extend(p.strip() for p in value.replace(",", ";").split(";") if p.strip())
    return parts


def _add_model_options(parser) -> None:
    parser.add_argument("--model", required=True, help="Model file (text or JSON)")


def _add_query_options(parser, abstract_query: bool = False) -> None:
    _add_model_options(parser)
    parser.add_argument("--effect", help="Effect predicate, e.g. 'pos < 0.6 && halt'")
    parser.add_argument(
        "--w",
        action="append",
        help="Contingency predicate or proposition (repeatable or ';'-separated)",
    )
    parser.add_argument("--query", help="JSON query file; its keys win over flags")
    parser.add_argument(
        "--root-policy", choices=["initial", "explicit", "all"], default="initial"
    )
    parser.add_argument("--roots", help="Comma-separated root names (explicit policy)")
    parser.add_argument(
        "--candidates",
        dest="candidate_policy",
        choices=["single", "subsets"] + ([] if abstract_query else ["template"]),
        default="single",
    )
    parser.add_argument("--max-subset-size", type=int, default=2)
    parser.add_argument("--se-mode", choices=["inequality", "trace"], default="inequality")
    parser.add_argument("--jobs", type=int, default=DEFAULT_JOBS)
    parser.add_argument("--format", choices=["text", "records"], default="text")
    if abstract_query:
        parser.add_argument(
            "--preds", required=False, help="';'-separated abstraction predicates"
        )
        parser.add_argument(
            "--w-strategy", choices=["w-preserving", "subgraphs"], default="w-preserving"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pac-causality",
        description="Probabilistic actual cause discovery in acyclic DTMCs",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="Check a given cause on the concrete model")
    _add_query_options(p)
    p.add_argument("--cause", required=True, help="Comma-separated state names")

    p = sub.add_parser("discover", help="Concrete cause discovery")
    _add_query_options(p)

    p = sub.add_parser("abs-discover", help="One abstract discovery pass")
    _add_query_options(p, abstract_query=True)
    p.add_argument(
        "--write-abstraction",
        metavar="PREFIX",
        help="Write PREFIX.mdp and PREFIX.abs-map",
    )

    p = sub.add_parser("refine", help="Abstraction-refinement loop")
    _add_query_options(p, abstract_query=True)
    p.add_argument("--alpha", default=str(DEFAULT_SPLIT_RATIO))
    p.add_argument("--max-rounds", type=int, default=DEFAULT_MAX_ROUNDS)
    p.add_argument("--fallback-concrete", action="store_true")
    p.add_argument("--times", action="store_true", help="Append wall-clock timings")

    p = sub.add_parser("subgraphs", help="Stutter-equivalent subgraph decomposition")
    _add_model_options(p)
    p.add_argument("--w", action="append", required=True)
    p.add_argument("--output-dir", help="Write one model file per subgraph")

    p = sub.add_parser("export-smt", help="SMT-LIB instance of concrete discovery")
    _add_query_options(p)
    p.add_argument("--output", help="Output file (default: stdout)")

    p = sub.add_parser("export-smt-abs", help="SMT-LIB instance of abstract discovery")
    _add_query_options(p, abstract_query=True)
    p.add_argument("--output", help="Output file (default: stdout)")

    p = sub.add_parser("gen", help="Generate a random DTMC")
    p.add_argument("--config", help="GenSpec file (key = value lines)")
    p.add_argument("--seed", type=int)
    p.add_argument("--output", help="Output file (default: stdout)")
    p.add_argument("--model-format", choices=["text", "json"], default="text")

    p = sub.add_parser("bench", help="Compare concrete and abstraction-refinement discovery")
    p.add_argument("--config", action="append", help="GenSpec file (repeatable)")
    p.add_argument("--seeds", type=int, help="Number of generated models")
    p.add_argument("--seed", type=int, help="First seed")
    p.add_argument("--budget", type=int, default=50, help="State budget per model")
    p.add_argument("--effect", default=BenchQuery.effect)
    p.add_argument("--preds", default=BenchQuery.predicates)
    p.add_argument("--w", action="append")
    p.add_argument("--alpha", default=str(DEFAULT_SPLIT_RATIO))
    p.add_argument("--max-rounds", type=int, default=DEFAULT_MAX_ROUNDS)
    p.add_argument("--timeout", type=float, default=BENCH_TIMEOUT)
    p.add_argument("--jobs", type=int, default=DEFAULT_JOBS)
    p.add_argument("--times", action="store_true", help="Append wall-clock timings")
    p.add_argument("--format", choices=["text", "records"], default="text")

    p = sub.add_parser("validate", help="Parse and validate a model file")
    _add_model_options(p)
    return parser


def _load_query_file(args) -> None:
    if not getattr(args, "query", None):
        return
    with open(args.query) as f:
        payload = json.load(f)
    unknown = set(payload) - set(QUERY_KEYS)
    if unknown:
        raise ValueError(f"unknown query keys {sorted(unknown)}")
    for key, value in payload.items():
        if key == "contingencies":
            args.w = list(value) if isinstance(value, list) else [value]
        elif key == "predicates":
            args.preds = ";".join(value) if isinstance(value, list) else value
        elif key == "roots":
            args.roots = ",".join(value) if isinstance(value, list) else value
        else:
            setattr(args, key, value)


def _effect(args):
    if not args.effect:
        raise ValueError("an effect predicate is required (--effect or --query)")
    return parse_predicate(args.effect)


def _read_model(path):
    with open(path) as f:
        return parse_model(f.read())


def _concrete_query(args, model) -> PacQuery:
    roots = tuple(_split([args.roots])) if args.roots else ()
    return PacQuery(
        model=model,
        effect=_effect(args),
        contingencies=tuple(parse_predicate(w) for w in _split(args.w)),
        root_policy=args.root_policy,
        roots=roots,
        candidate_policy=args.candidate_policy,
        max_subset_size=args.max_subset_size,
        se_mode=args.se_mode,
        jobs=args.jobs,
    )


def _abstract_query(args, model) -> AbstractPacQuery:
    effect = _effect(args)
    predicates = parse_predicate_set(args.preds or "")
    contingencies = tuple(parse_predicate(w) for w in _split(args.w))
    preserving = args.w_strategy == "w-preserving" and bool(contingencies)
    a = abstract(
        model,
        predicates,
        mode="w-preserving" if preserving else "plain",
        contingencies=contingencies,
    )
    roots = tuple(_split([args.roots])) if args.roots else ()
    return AbstractPacQuery(
        abstraction=a,
        effect=effect,
        contingencies=contingencies,
        w_strategy=args.w_strategy,
        root_policy=args.root_policy,
        roots=roots,
        candidate_policy=args.candidate_policy,
        max_subset_size=args.max_subset_size,
        se_mode=args.se_mode,
        jobs=args.jobs,
    )


def _emit_report(args, report) -> int:
    if report is None:
        if args.format == "records":
            print(json.dumps({"cause": None}, sort_keys=True))
        else:
            print("no cause found")
        return EXIT_NONE
    if args.format == "records":
        print(json.dumps(report.to_record(), sort_keys=True, ensure_ascii=False))
    else:
        sys.stdout.write(report.render())
    return EXIT_FOUND


def _write_or_print(text: str, output) -> None:
    if output:
        Path(output).write_text(text)
        logger.info(f"Wrote {output}")
    else:
        sys.stdout.write(text)


def cmd_check(args) -> int:
    q = _concrete_query(args, _read_model(args.model))
    result = check_cause(q, q.model.ids(_split([args.cause])))
    if result.confirmed:
        return _emit_report(args, result)
    if args.format == "records":
        record = {
            "cause": list(result.cause_names),
            "refuted": result.reason,
            "violations": [
                {
                    "root": v.root,
                    "counter_root": v.counter_root,
                    "p_aw": str(v.p_aw),
                    "p_cw": None if v.p_cw is None else str(v.p_cw),
                    "condition": v.condition,
                }
                for v in result.violations
            ],
        }
        print(json.dumps(record, sort_keys=True, ensure_ascii=False))
    else:
        sys.stdout.write(result.render())
    return EXIT_NONE


def cmd_discover(args) -> int:
    q = _concrete_query(args, _read_model(args.model))
    return _emit_report(args, discover(q))


def _subgraph_options(args) -> dict:
    return dict(
        root_policy=args.root_policy,
        candidate_policy=args.candidate_policy,
        max_subset_size=args.max_subset_size,
        se_mode=args.se_mode,
        jobs=args.jobs,
    )


def cmd_abs_discover(args) -> int:
    model = _read_model(args.model)
    if args.w_strategy == "subgraphs":
        for sub, q in subgraph_queries(
            model,
            parse_predicate_set(args.preds or ""),
            _effect(args),
            tuple(parse_predicate(w) for w in _split(args.w)),
            **_subgraph_options(args),
        ):
            report = discover_abs(q)
            if report is not None:
                return _emit_report(args, report)
        return _emit_report(args, None)

    q = _abstract_query(args, model)
    if args.write_abstraction:
        mdp_text, abs_map = serialize_abstraction(q.abstraction)
        Path(f"{args.write_abstraction}.mdp").write_text(mdp_text)
        Path(f"{args.write_abstraction}.abs-map").write_text(abs_map)
    return _emit_report(args, discover_abs(q))


def _emit_trace(args, trace) -> None:
    if args.format == "records":
        sys.stdout.write(trace.to_records(omit_times=not args.times))
        return
    for r in trace.rounds:
        line = f"round {r.round}: {r.n_states} abstract states, {r.outcome}"
        if r.split_state is not None:
            line += f" (widest {r.split_state} [{r.lo}, {r.hi}]"
            if r.split_into:
                line += f" -> {' '.join(r.split_into)}"
            line += ")"
        if args.times:
            line += f" {r.millis} ms"
        print(line)


def cmd_refine(args) -> int:
    model = _read_model(args.model)
    alpha = Fraction(str(args.alpha))
    if args.w_strategy == "subgraphs":
        report = None
        for sub, q in subgraph_queries(
            model,
            parse_predicate_set(args.preds or ""),
            _effect(args),
            tuple(parse_predicate(w) for w in _split(args.w)),
            **_subgraph_options(args),
        ):
            if args.format == "text":
                print(f"subgraph {format_signature(sub.signature, q.contingencies)}")
            result = run(q, alpha, args.max_rounds, args.fallback_concrete)
            _emit_trace(args, result.trace)
            if result.found:
                report = result.report
                break
        return _emit_report(args, report)

    result = run(_abstract_query(args, model), alpha, args.max_rounds, args.fallback_concrete)
    _emit_trace(args, result.trace)
    return _emit_report(args, result.report)


def cmd_subgraphs(args) -> int:
    model = _read_model(args.model)
    contingencies = tuple(parse_predicate(w) for w in _split(args.w))
    subgraphs = enumerate_subgraphs(model, contingencies)
    if args.output_dir:
        Path(args.output_dir).mkdir(parents=True, exist_ok=True)
    for k, sub in enumerate(subgraphs, start=1):
        names = " ".join(sub.model.names(range(sub.model.n_states)))
        print(
            f"subgraph {k} {format_signature(sub.signature, contingencies)}: "
            f"{len(sub.paths)} paths, states {names}"
        )
        if args.output_dir:
            Path(args.output_dir, f"subgraph_{k}.dtmc").write_text(
                serialize_model(sub.model)
            )
    return EXIT_FOUND


def cmd_export_smt(args) -> int:
    q = _concrete_query(args, _read_model(args.model))
    _write_or_print(export_smt(q).text, args.output)
    return EXIT_FOUND


def cmd_export_smt_abs(args) -> int:
    q = _abstract_query(args, _read_model(args.model))
    _write_or_print(export_smt_abs(q).text, args.output)
    return EXIT_FOUND


def cmd_gen(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        spec = GenSpec.from_file(args.config, **overrides)
    else:
        spec = GenSpec(**overrides)
    _write_or_print(serialize_model(generate(spec), args.model_format), args.output)
    return EXIT_FOUND


def cmd_bench(args) -> int:
    if args.config:
        specs = [GenSpec.from_file(path) for path in args.config]
    elif args.seeds:
        first = args.seed if args.seed is not None else DEFAULT_SEED
        specs = [
            GenSpec(seed=seed, state_budget=args.budget)
            for seed in range(first, first + args.seeds)
        ]
    else:
        raise ValueError("bench needs --config or --seeds")
    template = BenchQuery(
        effect=args.effect,
        predicates=args.preds,
        contingencies=tuple(_split(args.w)),
        alpha=Fraction(str(args.alpha)),
        max_rounds=args.max_rounds,
        timeout=args.timeout if args.timeout > 0 else None,
    )
    report = compare(specs, template, jobs=args.jobs)
    if args.format == "records":
        sys.stdout.write(report.to_records(omit_times=not args.times))
    else:
        sys.stdout.write(report.render(omit_times=not args.times))
    return EXIT_FOUND


def cmd_validate(args) -> int:
    model = _read_model(args.model)
    n_transitions = sum(len(row) for row in model.transitions)
    print(
        f"valid: {model.n_states} states, {n_transitions} transitions, "
        f"{len(model.initial)} initial, {len(model.absorbing)} absorbing"
    )
    return EXIT_FOUND


COMMANDS = {
    "check": cmd_check,
    "discover": cmd_discover,
    "abs-discover": cmd_abs_discover,
    "refine": cmd_refine,
    "subgraphs": cmd_subgraphs,
    "export-smt": cmd_export_smt,
    "export-smt-abs": cmd_export_smt_abs,
    "gen": cmd_gen,
    "bench": cmd_bench,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, stream=sys.stderr)

    try:
        _load_query_file(args)
        return COMMANDS[args.command](args)
    except (
        ModelSyntaxError,
        ModelValidationError,
        PathGuardExceeded,
        GenerationBudgetError,
        SmtDecodeError,
        VerificationMismatchError,
        ValueError,
        KeyError,
        OSError,
    ) as e:
        print(colored(f"error: {e}", "red"), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
