"""Command-line interface.

Commands: ``transform``, ``validate``, ``learn``, ``learn-em``, ``query``,
``complete`` and ``eval``.  Exit codes: 0 success, 1 usage, 2 data or
validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .em import DEFAULT_ITERS, DEFAULT_PARTICLES, run_stochastic_em, trace_csv
from .engine import Engine, Query, weighted_estimate
from .engine.estimate import Predictive
from .errors import (
    DataError,
    DCSyntaxError,
    DistributionError,
    InferenceError,
    NoExamples,
    RelCompleteError,
    TypeMismatch,
    ValidityError,
    ZeroEvidenceWeight,
)
from .evaluation import PredictionRecord, attribute_range, evaluate_predictions, metrics_csv, predict_cells
from .learner.dlt import LearnParams
from .learner.jmp import format_report, learn_jmp, with_database
from .relational import (
    OBSERVED,
    QUERY,
    Cell,
    CellRef,
    TableBundle,
    load_bundle,
    parse_bias,
    transform_tables,
    write_bundle,
)
from .syntax.parser import parse_goal, parse_program
from .syntax.printer import format_clause, format_program, format_term
from .syntax.program import Program
from .syntax.validate import validate_program

log = logging.getLogger("relcomplete")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_SAMPLES = 1000
PREDICTIONS_FILE = "predictions.csv"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; usage errors here exit with 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers shared with the tests


def _writable(path: Path, force: bool) -> Path:
    if path.exists() and not force:
        raise UsageError(f"{path} exists (use --force to overwrite)")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _cells_csv(cells: Sequence[CellRef]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["table", "key", "attribute"])
    for c in cells:
        w.writerow([c.table, c.key, c.attribute])
    return buf.getvalue()


def split_query(text: str) -> tuple[int | None, str, str]:
    """Split ``N :: goal | ev1, ev2`` into its parts; ``N ::`` and ``| ...`` are optional."""
    n = None
    if "::" in text:
        head, text = text.split("::", 1)
        head = head.strip().removeprefix("query").strip()
        try:
            n = int(head)
        except ValueError:
            raise UsageError(f"sample count {head!r} is not an integer") from None
    depth, quote = 0, None
    for i, ch in enumerate(text):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        elif ch == "|" and depth == 0:
            return n, text[:i].strip(), text[i + 1 :].strip().removesuffix(".")
    return n, text.strip().removesuffix("."), ""


def parse_query(text: str) -> tuple[int | None, Query]:
    n, goal_text, ev_text = split_query(text)
    if not goal_text:
        raise UsageError("empty query goal")
    goal = tuple(parse_goal(goal_text))
    evidence = {}
    for lit in parse_goal(ev_text):
        if getattr(lit, "functor", None) != "~=" or len(lit.args) != 2:
            raise UsageError(f"evidence must be 'rv ~= value', got {format_term(lit)}")
        evidence[lit.args[0]] = lit.args[1]
    return n, Query(goal, evidence)


def complete_bundle(
    program: Program, bundle: TableBundle, n_samples: int, rng: np.random.Generator
) -> tuple[TableBundle, list, dict]:
    """Fill every query cell with the mode of its predictive distribution.

    Returns the completed tables, the prediction records and the map from
    random variable to cell.  Cells whose evidence has zero weight keep
    their ``?`` and get no prediction.
    """
    data = transform_tables(bundle)
    eng = Engine(with_database(program, data))
    refs = {c.rv: c for c in data.queries}
    rands = bundle.schema.rands
    records = []
    for ref in data.queries:
        labels = None if rands[ref.attribute].continuous else rands[ref.attribute].domain
        records.extend(predict_cells(eng, [ref.rv], data.observed(), n_samples, rng, labels=labels))
    updates = {refs[r.cell]: Cell(OBSERVED, r.prediction) for r in records if r.prediction is not None}
    return bundle.with_cells(updates), records, refs


def predictions_csv(records: Sequence[PredictionRecord], refs: Mapping) -> str:
    """Sidecar with the full predictive distribution of every query cell."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["table", "key", "attribute", "status", "prediction", "distribution"])
    for r in records:
        ref = refs[r.cell]
        if r.predictive is None:
            w.writerow([ref.table, ref.key, ref.attribute, "zero-evidence-weight", "", ""])
            continue
        p = r.predictive
        if p.continuous:
            dist = {"mean": p.mean, "variance": p.variance}
            pred = repr(float(r.prediction))
        else:
            dist = {"probs": {format_term(k): v for k, v in p.probs.items()}}
            pred = format_term(r.prediction)
        w.writerow([ref.table, ref.key, ref.attribute, "ok", pred, json.dumps(dist)])
    return buf.getvalue()


def read_predictions(text: str, bundle: TableBundle) -> list[PredictionRecord]:
    """Prediction records from a sidecar file (truths left unset)."""
    rands = bundle.schema.rands
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        ref = CellRef(row["table"], row["key"], row["attribute"])
        decl = rands[ref.attribute]
        if row["status"] != "ok":
            out.append(PredictionRecord(ref.rv, None, None, None))
            continue
        dist = json.loads(row["distribution"])
        if decl.continuous:
            pred = Predictive(ref.rv, True, mean=dist["mean"], variance=dist["variance"])
            out.append(PredictionRecord(ref.rv, None, pred, float(row["prediction"])))
        else:
            labels = {format_term(l): l for l in decl.domain}
            probs = {labels[k]: v for k, v in dist["probs"].items()}
            out.append(PredictionRecord(ref.rv, None, Predictive(ref.rv, False, probs=probs), labels[row["prediction"]]))
    return out


def score_records(records: Sequence[PredictionRecord], truth: TableBundle) -> list[tuple]:
    """Metric rows for predictions against a fully observed truth bundle.

    NRMSE ranges are taken over every observed truth cell of the attribute.
    """
    rands = truth.schema.rands
    values: dict = {}
    for ref, c in truth.cells():
        if c.status == OBSERVED:
            values.setdefault(ref.attribute, {})[ref.rv] = c.value
    scored = []
    for r in records:
        t = values.get(r.cell.functor, {}).get(r.cell)
        if t is None:
            raise DataError(f"no truth for {format_term(r.cell)}")
        scored.append(PredictionRecord(r.cell, t, r.predictive, r.prediction))
    continuous = {a: d.continuous for a, d in rands.items()}
    ranges = {a: attribute_range(v.values()) for a, v in values.items() if continuous[a]}
    labels = {a: d.domain for a, d in rands.items() if not d.continuous}
    return evaluate_predictions(scored, continuous, ranges, labels)


# ---------------------------------------------------------------------------
# commands


def _learn_params(args) -> LearnParams:
    return LearnParams(
        epsilon=args.epsilon,
        max_depth=args.max_depth,
        max_body=args.max_body,
        n_proofs=args.samples,
        seed=args.seed,
    )


def _write_program(path: Path, program: Program, force: bool) -> None:
    _writable(path, force).write_text(format_program(program), encoding="utf-8")


def cmd_transform(args) -> int:
    bundle = load_bundle(args.schema, args.tables)
    data = transform_tables(bundle)
    out = Path(args.out)
    for name in ("facts.dc", "missing.csv", "queries.csv"):
        _writable(out / name, args.force)
    (out / "facts.dc").write_text("".join(format_clause(c) + "\n" for c in data.r_db + data.a_db), encoding="utf-8")
    (out / "missing.csv").write_text(_cells_csv(data.missing), encoding="utf-8")
    (out / "queries.csv").write_text(_cells_csv(data.queries), encoding="utf-8")
    print(f"{len(data.r_db)} relation facts, {len(data.a_db)} observed cells, "
          f"{len(data.missing)} missing, {len(data.queries)} query cells")
    return EXIT_OK


def cmd_validate(args) -> int:
    path = Path(args.program)
    program = parse_program(path.read_text(encoding="utf-8"), str(path))
    diags = validate_program(program, strict=args.strict)
    for d in diags:
        print(d)
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        return EXIT_DATA
    print(f"{path}: ok ({len(program)} clauses)")
    return EXIT_OK


def cmd_learn(args) -> int:
    bundle = load_bundle(args.schema, args.tables)
    bias = parse_bias(Path(args.bias).read_text(encoding="utf-8"), args.bias)
    out = Path(args.out)
    report = out.with_suffix(".report.txt")
    _writable(report, args.force)
    jmp = learn_jmp(transform_tables(bundle), bias, _learn_params(args))
    _write_program(out, jmp.program, args.force)
    report.write_text(format_report(jmp), encoding="utf-8")
    print(f"learned {len(jmp.trees)} trees -> {out}")
    return EXIT_OK


def cmd_learn_em(args) -> int:
    bundle = load_bundle(args.schema, args.tables)
    bias = parse_bias(Path(args.bias).read_text(encoding="utf-8"), args.bias)
    out = Path(args.out)
    report, trace = out.with_suffix(".report.txt"), out.with_suffix(".trace.csv")
    for p in (report, trace):
        _writable(p, args.force)
    res = run_stochastic_em(
        transform_tables(bundle), bias, iters=args.em_iters, params=_learn_params(args), k=args.em_particles, seed=args.seed
    )
    _write_program(out, res.model.program, args.force)
    report.write_text(format_report(res.model), encoding="utf-8")
    trace.write_text(trace_csv(res.trace), encoding="utf-8")
    for i, ll in res.trace:
        print(f"iteration {i}: loglik {ll:.4f}")
    return EXIT_OK


def _load_program(path: str) -> Program:
    return parse_program(Path(path).read_text(encoding="utf-8"), path)


def cmd_query(args) -> int:
    program = _load_program(args.program)
    if args.schema or args.tables:
        if not (args.schema and args.tables):
            raise UsageError("--schema and --tables go together")
        program = with_database(program, transform_tables(load_bundle(args.schema, args.tables)))
    eng = Engine(program)
    rng = np.random.default_rng(args.seed)
    status = EXIT_OK
    for text in args.queries:
        n, query = parse_query(text)
        n = n or args.samples or DEFAULT_SAMPLES
        try:
            est, weight = weighted_estimate(query, eng, n, rng)
            print(json.dumps({"estimate": est, "n_samples": n, "effective_evidence_weight": weight}))
        except ZeroEvidenceWeight:
            print(json.dumps({"estimate": None, "n_samples": n, "effective_evidence_weight": 0.0}))
            status = EXIT_NUMERIC
    return status


def cmd_complete(args) -> int:
    program = _load_program(args.program)
    bundle = load_bundle(args.schema, args.tables)
    out = Path(args.out)
    names = [e.name for e in bundle.schema.entities] + [l.name for l in bundle.schema.links]
    for name in [f"{n}.csv" for n in names] + [PREDICTIONS_FILE]:
        _writable(out / name, args.force)
    rng = np.random.default_rng(args.seed)
    done, records, refs = complete_bundle(program, bundle, args.samples or DEFAULT_SAMPLES, rng)
    write_bundle(done, out)
    (out / PREDICTIONS_FILE).write_text(predictions_csv(records, refs), encoding="utf-8")
    failed = [r for r in records if r.prediction is None]
    for r in failed:
        log.warning("%s: zero evidence weight, cell left as ?", refs[r.cell])
    print(f"filled {len(records) - len(failed)} of {len(records)} query cells -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    truth = load_bundle(args.schema, args.truth)
    sidecar = Path(args.completed) / PREDICTIONS_FILE
    if not sidecar.exists():
        raise DataError(f"{sidecar} not found (run complete first)")
    records = read_predictions(sidecar.read_text(encoding="utf-8"), truth)
    text = metrics_csv(score_records(records, truth))
    if args.out:
        _writable(Path(args.out), args.force).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _positive(kind):
    def check(text):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v

    return check


def _non_negative(kind):
    def check(text):
        v = kind(text)
        if v < 0:
            raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
        return v

    return check


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=_positive(int), default=1, help="worker cap (commands run in one process)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    def seeded(p, samples_help):
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--samples", type=_positive(int), default=None, help=samples_help)

    def learning(p):
        p.add_argument("schema")
        p.add_argument("tables")
        p.add_argument("bias")
        p.add_argument("-o", "--out", required=True, help="learned program (.dc)")
        p.add_argument("--epsilon", type=_non_negative(float), default=0.0)
        p.add_argument("--max-depth", type=_positive(int), default=4)
        p.add_argument("--max-body", type=_positive(int), default=6)
        seeded(p, "proofs per example (default: 1 for deterministic data, else 20)")

    parser = _Parser(prog="relcomplete", description="Learn and query probabilistic programs over relational tables.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("transform", parents=[common], help="tables -> facts")
    p.add_argument("schema")
    p.add_argument("tables")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("validate", parents=[common], help="check a .dc program")
    p.add_argument("program")
    p.add_argument("--strict", action="store_true", help="treat warnings as errors")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("learn", parents=[common], help="learn a joint model program")
    learning(p)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("learn-em", parents=[common], help="learn with stochastic EM over missing cells")
    learning(p)
    p.add_argument("--em-iters", type=_non_negative(int), default=DEFAULT_ITERS)
    p.add_argument("--em-particles", type=_positive(int), default=DEFAULT_PARTICLES)
    p.set_defaults(func=cmd_learn_em)

    p = sub.add_parser("query", parents=[common], help="estimate conditional probabilities")
    p.add_argument("program")
    p.add_argument("queries", nargs="+", help="'N :: goal | ev1, ev2'")
    p.add_argument("--schema")
    p.add_argument("--tables")
    seeded(p, f"samples per query without an explicit N (default {DEFAULT_SAMPLES})")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("complete", parents=[common], help="fill query cells with their most likely values")
    p.add_argument("program")
    p.add_argument("schema")
    p.add_argument("tables")
    p.add_argument("-o", "--out", required=True, help="output directory")
    seeded(p, f"samples per cell (default {DEFAULT_SAMPLES})")
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("eval", parents=[common], help="score completed cells against true tables")
    p.add_argument("schema")
    p.add_argument("completed", help="output directory of complete")
    p.add_argument("truth", help="directory with the true tables")
    p.add_argument("-o", "--out", help="metrics CSV (default: stdout only)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"relcomplete: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DCSyntaxError, ValidityError, TypeMismatch, NoExamples, FileNotFoundError) as e:
        print(f"relcomplete: error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (InferenceError, DistributionError) as e:
        print(f"relcomplete: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except RelCompleteError as e:
        print(f"relcomplete: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
