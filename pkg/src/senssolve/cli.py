"""Command-line front end: ``senssolve {analyze,changepoint,simulate,randref}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

from .design import load_design
from .errors import NonBinaryOutcome, SensSolveError
from .inference import changepoint, randomization_test, run_test
from .results import METHODS
from .separable import GammaModel
from .simlab import SCENARIO_LABELS, run_size_study, scenario

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2

_RESULT_FIELDS = ("method", "gamma", "tau0", "statistic", "expectation_bound", "se",
                  "deviate", "p_value", "reject", "alpha", "alternative")


class UsageError(Exception):
    pass


def parse_gamma(text: str) -> list[float]:
    """Comma list (``1,1.5,2``) or inclusive ``start:step:stop`` range."""
    text = text.strip()
    try:
        if ":" in text:
            start, step, stop = (float(p) for p in text.split(":"))
            if step <= 0 or stop < start:
                raise UsageError(f"bad gamma range {text!r}")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            values = [round(start + k * step, 12) for k in range(count)]
        else:
            values = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"cannot parse gamma {text!r}") from None
    if not values or any(not (g >= 1.0 and math.isfinite(g)) for g in values):
        raise UsageError("every gamma must be a finite number >= 1")
    return values


def _methods(text: str) -> list[str]:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise UsageError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")
    return methods


def _alpha(value: float) -> float:
    if not 0.0 < value <= 0.5:
        raise UsageError("alpha must lie in (0, 0.5]")
    return value


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return "" if v is None else str(v)


def _table(rows: list[dict], fields) -> str:
    cells = [[str(f) for f in fields]] + [[_fmt(r.get(f)) for f in fields] for r in rows]
    widths = [max(len(row[k]) for row in cells) for k in range(len(fields))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells) + "\n"


def _csv(rows: list[dict], fields) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: _fmt(r.get(k)) for k in fields})
    return buf.getvalue()


def _emit(payload: dict, rows: list[dict], fields, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(payload, indent=2) + "\n"
    if fmt == "csv":
        return _csv(rows, fields)
    return _table(rows, fields)


def cmd_analyze(args) -> str:
    design = load_design(args.input)
    methods = _methods(args.method)
    if "binary_ip" in methods and not design.is_binary:
        raise NonBinaryOutcome("binary_ip needs outcomes that are all 0 or 1")
    alpha = _alpha(args.alpha if args.alpha is not None else 0.05)
    results = [
        run_test(design, args.tau0, g, m, alpha, args.alternative).to_dict()
        for m in methods
        for g in parse_gamma(args.gamma)
    ]
    return _emit({"input": str(args.input), "results": results}, results, _RESULT_FIELDS, args.format)


def cmd_changepoint(args) -> str:
    design = load_design(args.input)
    methods = _methods(args.method)
    if "binary_ip" in methods and not design.is_binary:
        raise NonBinaryOutcome("binary_ip needs outcomes that are all 0 or 1")
    alpha = _alpha(args.alpha if args.alpha is not None else 0.05)
    rows = [changepoint(design, args.tau0, m, alpha, args.gamma_max, alternative=args.alternative).to_dict()
            for m in methods]
    fields = ("method", "alpha", "changepoint", "not_significant_at_one", "warnings")
    return _emit({"input": str(args.input), "changepoints": rows}, rows, fields, args.format)


def cmd_simulate(args) -> str:
    if args.scenario is None:
        raise UsageError("--scenario is required")
    overrides = {"seed": args.seed}
    if args.M is not None:
        overrides["M"] = args.M
    if args.B is not None:
        overrides["B"] = args.B
    if args.alpha is not None:
        overrides["alpha"] = _alpha(args.alpha)
    if args.gamma is not None:
        gammas = parse_gamma(args.gamma)
        if len(gammas) != 1:
            raise UsageError("simulate takes a single gamma")
        overrides["gamma"] = gammas[0]
    study = run_size_study(scenario(args.scenario, **overrides))
    if args.format == "json":
        return study.to_json() + "\n"
    row = study.table_row()
    if args.format == "csv":
        return study.to_csv()
    meta = ", ".join(f"{k}={study.metadata[k]}" for k in ("scenario", "seed", "M", "B", "gamma", "alpha"))
    return f"# {meta}\n" + _table([row], list(row))


def cmd_randref(args) -> str:
    design = load_design(args.input)
    alpha = _alpha(args.alpha if args.alpha is not None else 0.05)
    m_draws = args.M if args.M is not None else 10_000
    rows = []
    for g in parse_gamma(args.gamma):
        res, ref = randomization_test(design, args.tau0, GammaModel(g), alpha, m_draws, args.seed)
        rows.append({
            "gamma": g,
            "tau0": args.tau0,
            "observed_deviate": res.deviate,
            "critical_value": ref.quantile(1.0 - alpha),
            "p_value": res.p_value,
            "reject": res.deviate >= ref.quantile(1.0 - alpha),
            "m_draws": ref.count,
            "discarded": ref.discarded,
            "seed": ref.seed,
        })
    return _emit({"input": str(args.input), "reference": rows}, rows, list(rows[0]), args.format)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="senssolve", description="Sensitivity analysis for matched designs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        if data:
            p.add_argument("--input", required=True, help="delimited file with block_id, treated, outcome")
            p.add_argument("--tau0", type=float, default=0.0)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--format", choices=("json", "csv", "text"), default="text")

    p = sub.add_parser("analyze", help="worst-case p-values per method and gamma")
    common(p)
    p.add_argument("--method", default="dbar", help="comma list of " + ", ".join(METHODS))
    p.add_argument("--gamma", default="1", help="comma list or start:step:stop")
    p.add_argument("--alternative", choices=("greater", "less"), default="greater")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("changepoint", help="smallest gamma at which the test stops rejecting")
    common(p)
    p.add_argument("--method", default="dbar")
    p.add_argument("--gamma-max", type=float, default=10.0)
    p.add_argument("--alternative", choices=("greater", "less"), default="greater")
    p.set_defaults(func=cmd_changepoint)

    p = sub.add_parser("simulate", help="Monte Carlo size study for one scenario")
    common(p, data=False)
    p.add_argument("--scenario", choices=SCENARIO_LABELS)
    p.add_argument("--gamma", default=None)
    p.add_argument("--M", type=int, default=None, help="replicates")
    p.add_argument("--B", type=int, default=None, help="strata per replicate")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("randref", help="test referred to a biased-randomization distribution")
    common(p)
    p.add_argument("--gamma", default="1")
    p.add_argument("--M", type=int, default=None, help="number of draws")
    p.set_defaults(func=cmd_randref)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        out = args.func(args)
    except (UsageError, ValueError, KeyError, OSError) as exc:
        print(f"senssolve: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SensSolveError as exc:
        print(f"senssolve: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    sys.stdout.write(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
