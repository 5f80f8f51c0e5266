"""Command-line interface: model files, validation, solving, oracle runs.

Model documents are strict JSON (schema version "1"): unknown fields are
rejected with a path-qualified message, expressions are written in a
small infix grammar over node ids with ``+ - * / ^``, ``exp``, ``ln``
and parentheses (precedence ``^`` > unary ``-`` > ``* /`` > ``+ -``,
left-associative; the ``^`` exponent is a numeric literal).

Commands:

* ``infer validate <file>`` — parse and check a model.
* ``infer solve <file> [--json] [--epsilon F] [--max-iter N] [--no-pool]``
* ``infer oracle <file> --samples N --seed S [--json]``
* ``infer compare <file> --samples N --seed S [--json]``

Exit codes: 0 converged/ok, 2 diverged, 3 max-iterations reached,
4 input/schema error, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from .evidence import BINOMIAL, EVIDENCE_VARIANTS, EvidenceSpec
from .gaussian import ConditioningError
from .model import (
    Add,
    Const,
    Diagram,
    Div,
    Exp,
    Expr,
    InvalidDiagramError,
    Ln,
    Mul,
    Neg,
    Node,
    Pow,
    Sub,
    Var,
    basic,
    deterministic,
    evidence,
    format_expr,
    validate,
)
from .oracle import mc_posterior
from .solver import (
    CONVERGED,
    DIVERGED,
    MAX_ITERATIONS,
    SolverConfig,
    SolverError,
    SolverResult,
    solve,
)
from .specfun import ConvergenceError
from .transforms import BETA, PRIOR_FAMILIES, PriorSpec, Transform, TRANSFORM_KINDS

__all__ = [
    "EXIT_OK",
    "EXIT_DIVERGED",
    "EXIT_MAX_ITERATIONS",
    "EXIT_INPUT",
    "EXIT_NUMERICAL",
    "SchemaError",
    "ExpressionError",
    "parse_expression",
    "parse_model",
    "serialize_model",
    "main",
]

EXIT_OK = 0
EXIT_DIVERGED = 2
EXIT_MAX_ITERATIONS = 3
EXIT_INPUT = 4
EXIT_NUMERICAL = 5

SCHEMA_VERSION = "1"
_RESERVED_IDS = {"exp", "ln"}


class SchemaError(ValueError):
    """A model document violates the schema; ``path`` locates the problem."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------------------------------------------------------------------------
# Expression grammar


class ExpressionError(ValueError):
    """An expression string failed to parse; ``position`` is the offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens: list[tuple[str, str, int]] = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in "+-*/^()":
            tokens.append(("op", c, i))
            i += 1
            continue
        if c.isdigit() or c == ".":
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            lexeme = text[i:j]
            try:
                float(lexeme)
            except ValueError:
                raise ExpressionError(f"bad number {lexeme!r}", i) from None
            tokens.append(("num", lexeme, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
            continue
        raise ExpressionError(f"unexpected character {c!r}", i)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.pos]

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str) -> None:
        kind, val, at = self.take()
        if kind != "op" or val != op:
            raise ExpressionError(f"expected {op!r}, found {val or 'end of input'!r}", at)

    def parse(self) -> Expr:
        e = self.sum()
        kind, val, at = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected {val!r}", at)
        return e

    def sum(self) -> Expr:
        e = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                rhs = self.term()
                e = Add(e, rhs) if val == "+" else Sub(e, rhs)
            else:
                return e

    def term(self) -> Expr:
        e = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.take()
                rhs = self.factor()
                e = Mul(e, rhs) if val == "*" else Div(e, rhs)
            else:
                return e

    def factor(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return Neg(self.factor())
        return self.power()

    def power(self) -> Expr:
        e = self.atom()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val == "^":
                self.take()
                e = Pow(e, self.exponent())
            else:
                return e

    def exponent(self) -> float:
        kind, val, at = self.take()
        sign = 1.0
        if kind == "op" and val == "-":
            sign = -1.0
            kind, val, at = self.take()
        if kind == "op" and val == "(":
            inner = self.exponent()
            self.expect_op(")")
            return sign * inner
        if kind != "num":
            raise ExpressionError("exponent must be a numeric literal", at)
        return sign * float(val)

    def atom(self) -> Expr:
        kind, val, at = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            if val in _RESERVED_IDS:
                self.expect_op("(")
                inner = self.sum()
                self.expect_op(")")
                return Exp(inner) if val == "exp" else Ln(inner)
            return Var(val)
        if kind == "op" and val == "(":
            inner = self.sum()
            self.expect_op(")")
            return inner
        raise ExpressionError(f"unexpected {val or 'end of input'!r}", at)


def parse_expression(text: str) -> Expr:
    """Compile an infix expression string to an expression tree."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Model documents


def _require_keys(obj: dict, path: str, required: set[str], optional: set[str] = frozenset()) -> None:
    for key in obj:
        if key not in required and key not in optional:
            raise SchemaError(f"{path}.{key}", "unknown field")
    for key in required:
        if key not in obj:
            raise SchemaError(path, f"missing required field {key!r}")


def _number(obj: dict, path: str, key: str) -> float:
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{path}.{key}", f"expected a number, got {v!r}")
    return float(v)


def _integer(obj: dict, path: str, key: str) -> int:
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(f"{path}.{key}", f"expected an integer, got {v!r}")
    return v


def _parse_transform(obj, path: str) -> Transform:
    if not isinstance(obj, dict):
        raise SchemaError(path, "transform must be an object")
    _require_keys(obj, path, {"kind", "a", "b"})
    if obj["kind"] not in TRANSFORM_KINDS:
        raise SchemaError(f"{path}.kind", f"expected one of {list(TRANSFORM_KINDS)}")
    try:
        return Transform(obj["kind"], _number(obj, path, "a"), _number(obj, path, "b"))
    except ValueError as err:
        raise SchemaError(path, str(err)) from None


def _parse_prior(obj, path: str, transform: Transform) -> PriorSpec:
    if not isinstance(obj, dict):
        raise SchemaError(path, "prior must be an object")
    if "family" not in obj:
        raise SchemaError(path, "missing required field 'family'")
    family = obj["family"]
    if family not in PRIOR_FAMILIES:
        raise SchemaError(f"{path}.family", f"expected one of {list(PRIOR_FAMILIES)}")
    try:
        if family == BETA:
            _require_keys(obj, path, {"family", "alpha", "beta"})
            return PriorSpec(
                family=family,
                transform=transform,
                alpha=_number(obj, path, "alpha"),
                beta=_number(obj, path, "beta"),
            )
        _require_keys(obj, path, {"family", "mean", "variance"})
        return PriorSpec(
            family=family,
            transform=transform,
            mean=_number(obj, path, "mean"),
            variance=_number(obj, path, "variance"),
        )
    except ValueError as err:
        raise SchemaError(path, str(err)) from None


def _parse_evidence_spec(obj, path: str) -> EvidenceSpec:
    if not isinstance(obj, dict):
        raise SchemaError(path, "evidence must be an object")
    if "variant" not in obj:
        raise SchemaError(path, "missing required field 'variant'")
    variant = obj["variant"]
    if variant not in EVIDENCE_VARIANTS:
        raise SchemaError(f"{path}.variant", f"expected one of {list(EVIDENCE_VARIANTS)}")
    try:
        if variant == BINOMIAL:
            _require_keys(obj, path, {"variant", "count", "successes"}, {"alpha", "beta"})
            return EvidenceSpec(
                variant=variant,
                count=_integer(obj, path, "count"),
                successes=_integer(obj, path, "successes"),
                alpha=_number(obj, path, "alpha") if "alpha" in obj else None,
                beta=_number(obj, path, "beta") if "beta" in obj else None,
            )
        lognormal = bool(obj.get("lognormal_samples", False))
        value_key = "variance" if variant == "normal_known_var" else "sample_var"
        if lognormal:
            _require_keys(
                obj,
                path,
                {"variant", "lognormal_samples", "samples"},
                {value_key} if variant == "normal_known_var" else set(),
            )
            samples = obj["samples"]
            if not isinstance(samples, list) or not all(
                isinstance(s, (int, float)) and not isinstance(s, bool) for s in samples
            ):
                raise SchemaError(f"{path}.samples", "expected a list of numbers")
            return EvidenceSpec(
                variant=variant,
                lognormal_samples=True,
                samples=tuple(float(s) for s in samples),
                variance=_number(obj, path, "variance") if variant == "normal_known_var" else None,
            )
        _require_keys(obj, path, {"variant", "count", "sample_mean", value_key})
        return EvidenceSpec(
            variant=variant,
            count=_integer(obj, path, "count"),
            sample_mean=_number(obj, path, "sample_mean"),
            variance=_number(obj, path, "variance") if variant == "normal_known_var" else None,
            sample_var=_number(obj, path, "sample_var") if variant == "normal_unknown_var" else None,
        )
    except SchemaError:
        raise
    except ValueError as err:
        raise SchemaError(path, str(err)) from None


def _parse_node(obj, path: str, declared: set[str]) -> Node:
    if not isinstance(obj, dict):
        raise SchemaError(path, "node must be an object")
    for key in ("id", "kind"):
        if key not in obj:
            raise SchemaError(path, f"missing required field {key!r}")
    nid = obj["id"]
    if not isinstance(nid, str) or not nid:
        raise SchemaError(f"{path}.id", "id must be a non-empty string")
    if not (nid[0].isalpha() or nid[0] == "_") or not all(
        c.isalnum() or c == "_" for c in nid
    ):
        raise SchemaError(f"{path}.id", f"id {nid!r} is not a valid identifier")
    if nid in _RESERVED_IDS:
        raise SchemaError(f"{path}.id", f"id {nid!r} is reserved for a function name")
    kind = obj["kind"]
    if kind == "basic":
        _require_keys(obj, path, {"id", "kind", "transform", "prior"})
        transform = _parse_transform(obj["transform"], f"{path}.transform")
        prior = _parse_prior(obj["prior"], f"{path}.prior", transform)
        return basic(nid, prior)
    if kind == "deterministic":
        _require_keys(obj, path, {"id", "kind", "transform", "expr"})
        transform = _parse_transform(obj["transform"], f"{path}.transform")
        if not isinstance(obj["expr"], str):
            raise SchemaError(f"{path}.expr", "expression must be a string")
        try:
            tree = parse_expression(obj["expr"])
        except ExpressionError as err:
            raise SchemaError(f"{path}.expr", str(err)) from None
        return deterministic(nid, transform, tree)
    if kind == "evidence":
        _require_keys(obj, path, {"id", "kind", "parent", "evidence"})
        parent = obj["parent"]
        if not isinstance(parent, str):
            raise SchemaError(f"{path}.parent", "parent must be a node id")
        if parent not in declared:
            raise SchemaError(f"{path}.parent", f"unknown parent id {parent!r}")
        spec = _parse_evidence_spec(obj["evidence"], f"{path}.evidence")
        return evidence(nid, parent, spec)
    raise SchemaError(f"{path}.kind", "expected one of ['basic', 'deterministic', 'evidence']")


def _parse_solver(obj, path: str) -> SolverConfig:
    if not isinstance(obj, dict):
        raise SchemaError(path, "solver must be an object")
    _require_keys(
        obj, path, set(), {"epsilon", "divergence_window", "max_iterations", "pool_evidence"}
    )
    kwargs = {}
    if "epsilon" in obj:
        kwargs["epsilon"] = _number(obj, path, "epsilon")
    if "divergence_window" in obj:
        kwargs["divergence_window"] = _integer(obj, path, "divergence_window")
    if "max_iterations" in obj:
        kwargs["max_iterations"] = _integer(obj, path, "max_iterations")
    if "pool_evidence" in obj:
        if not isinstance(obj["pool_evidence"], bool):
            raise SchemaError(f"{path}.pool_evidence", "expected true or false")
        kwargs["pool_evidence"] = obj["pool_evidence"]
    try:
        return SolverConfig(**kwargs)
    except ValueError as err:
        raise SchemaError(path, str(err)) from None


def parse_model(source: str | Path, check: bool = True) -> tuple[Diagram, SolverConfig]:
    """Parse a model document into a diagram and solver configuration.

    ``source`` is JSON text, or a :class:`pathlib.Path` to read.  With
    ``check`` (the default) the diagram must also pass
    :func:`gaussid.model.validate`; pass ``check=False`` to obtain the
    diagram for separate validation reporting.
    """
    if isinstance(source, Path):
        text = source.read_text(encoding="utf-8")
    else:
        text = source
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise SchemaError("$", f"not valid JSON: {err}") from None
    if not isinstance(doc, dict):
        raise SchemaError("$", "document must be a JSON object")
    _require_keys(doc, "$", {"schema_version", "nodes"}, {"solver"})
    if doc["schema_version"] != SCHEMA_VERSION:
        raise SchemaError(
            "$.schema_version",
            f"unsupported version {doc['schema_version']!r}; this build reads {SCHEMA_VERSION!r}",
        )
    if not isinstance(doc["nodes"], list):
        raise SchemaError("$.nodes", "nodes must be a list")

    ids: set[str] = set()
    for i, entry in enumerate(doc["nodes"]):
        if isinstance(entry, dict) and isinstance(entry.get("id"), str):
            if entry["id"] in ids:
                raise SchemaError(f"$.nodes[{i}].id", f"duplicate node id {entry['id']!r}")
            ids.add(entry["id"])

    nodes = [_parse_node(entry, f"$.nodes[{i}]", ids) for i, entry in enumerate(doc["nodes"])]
    diagram = Diagram.from_nodes(nodes)
    config = _parse_solver(doc.get("solver", {}), "$.solver")
    if check:
        problems = validate(diagram)
        if problems:
            raise InvalidDiagramError(problems)
    return diagram, config


def serialize_model(d: Diagram, cfg: SolverConfig | None = None) -> dict:
    """Render a diagram (and optional non-default solver settings) as a document."""
    nodes = []
    for n in d.nodes.values():
        if n.kind == "basic":
            p = n.prior
            prior = (
                {"family": p.family, "alpha": p.alpha, "beta": p.beta}
                if p.family == BETA
                else {"family": p.family, "mean": p.mean, "variance": p.variance}
            )
            nodes.append(
                {
                    "id": n.id,
                    "kind": n.kind,
                    "transform": {"kind": n.transform.kind, "a": n.transform.a, "b": n.transform.b},
                    "prior": prior,
                }
            )
        elif n.kind == "deterministic":
            nodes.append(
                {
                    "id": n.id,
                    "kind": n.kind,
                    "transform": {"kind": n.transform.kind, "a": n.transform.a, "b": n.transform.b},
                    "expr": format_expr(n.expr),
                }
            )
        else:
            spec = n.obs
            entry: dict = {"variant": spec.variant}
            if spec.variant == BINOMIAL:
                entry.update(count=spec.count, successes=spec.successes)
                if spec.alpha is not None:
                    entry.update(alpha=spec.alpha, beta=spec.beta)
            elif spec.lognormal_samples:
                entry.update(lognormal_samples=True, samples=list(spec.samples))
                if spec.variance is not None:
                    entry.update(variance=spec.variance)
            else:
                entry.update(count=spec.count, sample_mean=spec.sample_mean)
                if spec.variant == "normal_known_var":
                    entry.update(variance=spec.variance)
                else:
                    entry.update(sample_var=spec.sample_var)
            nodes.append({"id": n.id, "kind": n.kind, "parent": n.parents[0], "evidence": entry})

    doc: dict = {"schema_version": SCHEMA_VERSION, "nodes": nodes}
    if cfg is not None:
        default = SolverConfig()
        overrides = {
            key: getattr(cfg, key)
            for key in ("epsilon", "divergence_window", "max_iterations", "pool_evidence")
            if getattr(cfg, key) != getattr(default, key)
        }
        if overrides:
            doc["solver"] = overrides
    return doc


# ---------------------------------------------------------------------------
# Commands


class _Cli(argparse.ArgumentParser):
    def error(self, message: str):  # usage problems are input errors, not "diverged"
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Cli(prog="infer", description="Influence-diagram inference by iterative linearization")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Cli)

    p_val = sub.add_parser("validate", help="check a model file")
    p_val.add_argument("file")

    p_solve = sub.add_parser("solve", help="run the iterative solver")
    p_solve.add_argument("file")
    p_solve.add_argument("--json", action="store_true", help="machine-readable output")
    p_solve.add_argument("--epsilon", type=float, help="override convergence tolerance")
    p_solve.add_argument("--max-iter", type=int, help="override the iteration cap")
    p_solve.add_argument("--no-pool", action="store_true", help="keep observations separate")
    p_solve.add_argument("--full-precision", action="store_true", help="print 17 significant digits")

    p_mc = sub.add_parser("oracle", help="Monte Carlo reference posterior")
    p_mc.add_argument("file")
    p_mc.add_argument("--samples", type=int, required=True)
    p_mc.add_argument("--seed", type=int, required=True)
    p_mc.add_argument("--json", action="store_true")
    p_mc.add_argument("--full-precision", action="store_true")

    p_cmp = sub.add_parser("compare", help="solver versus Monte Carlo, side by side")
    p_cmp.add_argument("file")
    p_cmp.add_argument("--samples", type=int, required=True)
    p_cmp.add_argument("--seed", type=int, required=True)
    p_cmp.add_argument("--json", action="store_true")
    p_cmp.add_argument("--full-precision", action="store_true")

    return parser


def _fmt(x: float, full: bool) -> str:
    return f"{x:.17g}" if full else f"{x:.6g}"


def _load(path: str, check: bool = True):
    return parse_model(Path(path), check=check)


_STATUS_EXIT = {
    CONVERGED: EXIT_OK,
    DIVERGED: EXIT_DIVERGED,
    MAX_ITERATIONS: EXIT_MAX_ITERATIONS,
}


def _cmd_validate(args) -> int:
    try:
        diagram, _ = _load(args.file, check=False)
    except (OSError, SchemaError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    problems = validate(diagram)
    if problems:
        for nid, message in problems:
            print(f"{nid}: {message}", file=sys.stderr)
        return EXIT_INPUT
    print(f"ok: {len(diagram.nodes)} nodes")
    return EXIT_OK


def _solver_payload(result: SolverResult) -> dict:
    ids = list(result.param_ids)
    return {
        "status": result.status,
        "iterations": len(result.iterations),
        "reported_iteration": result.reported_iteration,
        "r_max": [rec.r_max for rec in result.iterations],
        "posterior": {
            pid: {"mean": m.mean, "variance": m.variance}
            for pid, m in result.posterior_y.items()
        },
        "correlations": {
            "parameters": ids,
            "matrix": [[float(v) for v in row] for row in result.posterior_correlations],
        },
    }


def _print_solve_table(result: SolverResult, full: bool) -> None:
    print(f"status: {result.status}")
    print(f"iterations: {len(result.iterations)}  reported: {result.reported_iteration}")
    print("iteration  r_max")
    for rec in result.iterations:
        print(f"{rec.t:>9}  {_fmt(rec.r_max, full)}")
    print("posterior:")
    for pid in result.param_ids:
        m = result.posterior_y[pid]
        print(f"{pid}  mean {_fmt(m.mean, full)}  var {_fmt(m.variance, full)}")
    if len(result.param_ids) > 1:
        print("correlations:")
        width = max(len(pid) for pid in result.param_ids)
        for i, pid in enumerate(result.param_ids):
            row = "  ".join(
                _fmt(float(result.posterior_correlations[i, j]), full)
                for j in range(len(result.param_ids))
            )
            print(f"{pid:<{width}}  {row}")


def _cmd_solve(args) -> int:
    try:
        diagram, config = _load(args.file)
    except (OSError, SchemaError, InvalidDiagramError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    overrides = {}
    if args.epsilon is not None:
        overrides["epsilon"] = args.epsilon
    if args.max_iter is not None:
        overrides["max_iterations"] = args.max_iter
    if args.no_pool:
        overrides["pool_evidence"] = False
    if overrides:
        try:
            config = SolverConfig(
                **{
                    **{
                        k: getattr(config, k)
                        for k in ("epsilon", "divergence_window", "max_iterations", "pool_evidence")
                    },
                    **overrides,
                }
            )
        except ValueError as err:
            print(f"error: {err}", file=sys.stderr)
            return EXIT_INPUT
    try:
        result = solve(diagram, config)
    except (SolverError, ConditioningError, ConvergenceError, OverflowError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    if args.json:
        print(json.dumps(_solver_payload(result), indent=2))
    else:
        _print_solve_table(result, args.full_precision)
    return _STATUS_EXIT[result.status]


def _cmd_oracle(args) -> int:
    try:
        diagram, _ = _load(args.file)
    except (OSError, SchemaError, InvalidDiagramError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    if args.samples < 1:
        print(f"error: --samples must be >= 1, got {args.samples}", file=sys.stderr)
        return EXIT_INPUT
    try:
        est = mc_posterior(diagram, args.samples, args.seed)
    except (RuntimeError, ValueError, OverflowError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    if args.json:
        payload = {
            "samples": est.n_samples,
            "seed": est.seed,
            "ess": est.ess,
            "estimates": {
                pid: {
                    "mean": est.mean[pid],
                    "variance": est.variance[pid],
                    "se_mean": est.se_mean[pid],
                    "se_var": est.se_var[pid],
                }
                for pid in est.param_ids
            },
            "warnings": list(est.warnings),
        }
        print(json.dumps(payload, indent=2))
    else:
        full = args.full_precision
        print(f"samples: {est.n_samples}  seed: {est.seed}  ess: {_fmt(est.ess, full)}")
        for pid in est.param_ids:
            print(
                f"{pid}  mean {_fmt(est.mean[pid], full)}  se {_fmt(est.se_mean[pid], full)}"
                f"  var {_fmt(est.variance[pid], full)}  se_var {_fmt(est.se_var[pid], full)}"
            )
        for warning in est.warnings:
            print(f"warning: {warning}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    try:
        diagram, config = _load(args.file)
    except (OSError, SchemaError, InvalidDiagramError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    if args.samples < 1:
        print(f"error: --samples must be >= 1, got {args.samples}", file=sys.stderr)
        return EXIT_INPUT
    try:
        result = solve(diagram, config)
        est = mc_posterior(diagram, args.samples, args.seed)
    except (SolverError, ConditioningError, ConvergenceError, RuntimeError, OverflowError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL

    rows = {}
    flagged = False
    for pid in result.param_ids:
        approx = result.posterior_y[pid]
        d_mean = abs(approx.mean - est.mean[pid])
        d_var = abs(approx.variance - est.variance[pid])
        se_m = est.se_mean[pid]
        se_v = est.se_var[pid]
        mean_flag = d_mean > max(3.0 * se_m, 0.02 * max(abs(approx.mean), abs(est.mean[pid])))
        var_flag = d_var > max(3.0 * se_v, 0.02 * max(abs(approx.variance), abs(est.variance[pid])))
        row_flag = bool(mean_flag or var_flag)
        flagged = flagged or row_flag
        rows[pid] = {
            "approx": {"mean": approx.mean, "variance": approx.variance},
            "mc": {
                "mean": est.mean[pid],
                "variance": est.variance[pid],
                "se_mean": se_m,
                "se_var": se_v,
            },
            "discrepancy": {
                "mean_abs": d_mean,
                "mean_in_se": (d_mean / se_m) if se_m > 0 else math.inf,
                "var_abs": d_var,
                "var_in_se": (d_var / se_v) if se_v > 0 else math.inf,
                "flagged": row_flag,
            },
        }

    if args.json:
        payload = {
            "status": result.status,
            "samples": est.n_samples,
            "seed": est.seed,
            "ess": est.ess,
            "flagged": flagged,
            "parameters": rows,
            "warnings": list(est.warnings),
        }
        print(json.dumps(payload, indent=2))
    else:
        full = args.full_precision
        print(
            f"status: {result.status}  samples: {est.n_samples}  seed: {est.seed}"
            f"  ess: {_fmt(est.ess, full)}"
        )
        for pid, row in rows.items():
            d = row["discrepancy"]
            marker = "  <-- flagged" if d["flagged"] else ""
            print(
                f"{pid}  approx mean {_fmt(row['approx']['mean'], full)}"
                f" var {_fmt(row['approx']['variance'], full)}"
                f"  mc mean {_fmt(row['mc']['mean'], full)} ± {_fmt(row['mc']['se_mean'], full)}"
                f" var {_fmt(row['mc']['variance'], full)} ± {_fmt(row['mc']['se_var'], full)}"
                f"  Δmean {_fmt(d['mean_abs'], full)} ({_fmt(d['mean_in_se'], full)} se){marker}"
            )
        for warning in est.warnings:
            print(f"warning: {warning}")
        if flagged:
            print("discrepancy flag: approximation and Monte Carlo disagree beyond tolerance")
    return _STATUS_EXIT[result.status]


_COMMANDS = {
    "validate": _cmd_validate,
    "solve": _cmd_solve,
    "oracle": _cmd_oracle,
    "compare": _cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)
