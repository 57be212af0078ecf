"""Command-line interface: ``gfbgg simulate|fit|select|study|loglik``.

Exit codes: 0 success, 2 data or input error, 3 convergence failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .data import EMBEDDED, dataset_to_csv, ingest_csv, load_embedded
from .fit import DirectOptions, EmOptions, fit
from .inference import SingularInformationError, bootstrap, louis_information, wald_intervals
from .model import DataError, ModelFamily, observed_log_likelihood
from .numerics import EvaluationError, RandomStream
from .selection import CRITERIA, criteria, get_grid, select
from .simulate import SimConfig, simulate_dataset
from .study import RecoveryDesign, StudyDesign, run_parameter_study, run_recovery_study, truth_for

EXIT_OK, EXIT_DATA, EXIT_CONVERGENCE = 0, 2, 3


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(obj[k], indent, level + 1)}" for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return format(v, ".17g") if math.isfinite(v) else "null"
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    return json.dumps(str(obj))


def to_json(obj) -> str:
    """Deterministic JSON: sorted keys, floats at 17 significant digits, NaN as null."""
    return _encode(obj, 2, 0) + "\n"


def _f3(v) -> str:
    return "-" if v is None or (isinstance(v, float) and not math.isfinite(v)) else f"{v:.3f}"


def fit_table(result, intervals=None) -> str:
    """Parameter table: an MLE row, then Boot SE / LL / UL rows when intervals exist."""
    names = list(result.family.free_names)
    crit = criteria(result.loglik, result.n_params, result.n_obs) if result.n_obs and math.isfinite(result.loglik) else None
    head = ["", *names, "lnL", "AIC"]
    rows = [["MLE", *(_f3(result.estimates[n]) for n in names), _f3(result.loglik), _f3(crit.aic) if crit else "-"]]
    if intervals is not None and len(intervals):
        prefix = "Boot " if intervals.method.startswith("bootstrap") else ""
        for label, attr in (("SE", "se"), ("LL", "lower"), ("UL", "upper")):
            rows.append([prefix + label, *(_f3(getattr(intervals[n], attr)) for n in names), "", ""])
    widths = [max(len(r[i]) for r in [head, *rows]) for i in range(len(head))]
    lines = [result.family.label]
    for r in [head, *rows]:
        lines.append("  ".join(c.rjust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def selection_table(report) -> str:
    head = ["rank", "model", "family", "d", "lnL", "AIC", "BIC", "AICc", "BC", "flag"]
    rows = []
    # order rows by AIC, or by the first criterion kept
    key = "aic" if "aic" in report.rankings else next(iter(report.rankings))
    for i, mid in enumerate(report.rankings[key], start=1):
        c = report.by_id(mid)
        cr = c.criteria
        rows.append([
            str(i), mid, f"{c.family.before}/{c.family.after}/{c.family.frailty}", str(c.family.n_params),
            _f3(c.fit.loglik if c.fit else None),
            *(_f3(cr.get(k) if cr else None) for k in CRITERIA),
            "" if c.ok else "not-converged",
        ])
    widths = [max(len(r[i]) for r in [head, *rows]) for i in range(len(head))]
    out = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in [head, *rows]]
    best = "  ".join(f"{k.upper()}: {v[0]}" for k, v in report.rankings.items())
    return "\n".join(out) + "\nbest  " + best + "\n"


def _write(text: str, path: str | None):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------


def _add_data_args(p: argparse.ArgumentParser):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--data", help="CSV file with columns y1,y2 (header optional)")
    g.add_argument("--dataset", choices=sorted(EMBEDDED), help="embedded dataset id")
    p.add_argument("--scale-y1", type=float, default=None, help="divide y1 by this (nuclear default 365)")
    p.add_argument("--scale-y2", type=float, default=None, help="divide y2 by this")
    p.add_argument("--jitter-ties", type=float, default=None, help="break exact ties by lowering one column by this amount")
    p.add_argument("--tie-side", choices=("y1", "y2"), default="y2", help="column lowered by --jitter-ties")


def _load_data(args):
    if args.dataset:
        return load_embedded(
            args.dataset,
            scale_y1=args.scale_y1,
            scale_y2=args.scale_y2,
            jitter_ties=args.jitter_ties,
            tie_side=args.tie_side,
        )
    d = ingest_csv(args.data, jitter_ties=args.jitter_ties, tie_side=args.tie_side)
    if args.scale_y1 or args.scale_y2:
        from .model import partition

        y1 = d.y1 / (args.scale_y1 or 1.0)
        y2 = d.y2 / (args.scale_y2 or 1.0)
        d = partition(np.column_stack([y1, y2]))
    return d


def _params(family: ModelFamily, text: str | None) -> dict:
    given = json.loads(text) if text else {}
    if isinstance(given, str):
        given = json.loads(Path(given).read_text())
    return truth_for(family, given)


def _fit_options(args):
    if args.method == "em":
        return EmOptions(mc_size=args.mc_size, seed=args.seed, max_iter=args.max_iter,
                         estep_mode="quadrature" if args.quadrature else "mc")
    return DirectOptions(seed=args.seed)


def _add_fit_args(p):
    p.add_argument("--method", choices=["em", "direct"], default="direct")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mc-size", type=int, default=1000)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--quadrature", action="store_true", help="noise-free quadrature E-step for EM")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    fam = ModelFamily.parse(args.model)
    params = _params(fam, args.params)
    cfg = SimConfig(fam.build(params), args.n, args.seed, args.replicate)
    d = simulate_dataset(cfg)
    _write(dataset_to_csv(d), args.out)
    sidecar = args.sidecar or (args.out + ".json" if args.out not in (None, "-") else None)
    if sidecar:
        Path(sidecar).write_text(to_json({"config": cfg.to_dict(), "family": fam.to_dict()}))
    return EXIT_OK


def cmd_fit(args) -> int:
    fam = ModelFamily.parse(args.model)
    d = _load_data(args)
    res = fit(fam, d, args.method, _fit_options(args))
    ints = None
    ci_error = ""
    if args.ci == "louis" and res.converged:
        try:
            info = louis_information(fam, res.estimates, d, mc_size=args.mc_size, stream=RandomStream(args.seed, (0x1015,)))
            ints = wald_intervals(info, res.estimates, args.level)
        except (SingularInformationError, EvaluationError) as exc:
            ci_error = str(exc)
    elif args.ci == "bootstrap" and res.converged:
        ints = bootstrap(res, d, args.boot_reps, mode=args.boot_mode, seed=args.seed, level=args.level,
                         workers=args.workers).intervals
    crit = criteria(res.loglik, res.n_params, d.n) if math.isfinite(res.loglik) else None
    if args.trace:
        names = list(fam.free_names)
        lines = [",".join(["iteration", *names, "loglik"])]
        for i, row in enumerate(res.trace, start=1):
            lines.append(",".join([str(row.get("iteration", i)), *(format(row[n], ".17g") if n in row else "" for n in names),
                                   format(row.get("loglik", math.nan), ".17g")]))
        Path(args.trace).write_text("\n".join(lines) + "\n")
    if args.format == "table":
        _write(fit_table(res, ints), args.out)
    else:
        out = {**res.to_dict(), "n": d.n, "criteria": crit.to_dict() if crit else None,
               "intervals": ints.to_dict() if ints else None, "seed": args.seed}
        if ci_error:
            out["interval_error"] = ci_error
        _write(to_json(out), args.out)
    return EXIT_OK if res.converged else EXIT_CONVERGENCE


def cmd_select(args) -> int:
    keep = list(CRITERIA)
    if args.criteria != "all":
        keep = [c.strip().lower() for c in args.criteria.split(",")]
        unknown = sorted(set(keep) - set(CRITERIA))
        if unknown or not keep:
            raise ValueError(f"unknown criteria {unknown}; choose from {list(CRITERIA)}")
    d = _load_data(args)
    grid = get_grid(args.grid)
    rep = select(d, grid, method=args.method, options=_fit_options(args), workers=args.workers)
    status = EXIT_OK if rep.best("aic").ok else EXIT_CONVERGENCE
    rep.rankings = {k: v for k, v in rep.rankings.items() if k in keep}
    if args.format == "table":
        _write(selection_table(rep), args.out)
    else:
        _write(to_json({**rep.to_dict(), "seed": args.seed}), args.out)
    return status


def _prefix_write(prefix: str | None, suffix: str, text: str):
    if prefix:
        Path(prefix + suffix).write_text(text)


def cmd_study(args) -> int:
    design_dict = json.loads(Path(args.design).read_text()) if args.design else {}
    if args.kind == "params":
        design = StudyDesign.from_dict(design_dict)
        rep = run_parameter_study(design, workers=args.workers)
        _prefix_write(args.out_prefix, "_table.csv", rep.table_csv())
        _prefix_write(args.out_prefix, "_raw.csv", rep.raw_csv())
        text = rep.table_csv() if args.format == "table" else to_json(rep.to_dict())
        _write(text, None if args.out_prefix else "-")
        if args.out_prefix:
            Path(args.out_prefix + "_report.json").write_text(to_json(rep.to_dict()))
        return EXIT_OK if rep.n_fitted > 0 else EXIT_CONVERGENCE
    design = RecoveryDesign.from_dict(design_dict)
    rep = run_recovery_study(design, workers=args.workers)
    _prefix_write(args.out_prefix, "_proportions.csv", rep.proportions_csv())
    if args.out_prefix:
        Path(args.out_prefix + "_report.json").write_text(to_json(rep.to_dict()))
    _write(rep.proportions_csv() if args.format == "table" else to_json(rep.to_dict()), None)
    return EXIT_OK


def cmd_loglik(args) -> int:
    fam = ModelFamily.parse(args.model)
    d = _load_data(args)
    params = _params(fam, args.params)
    ll = observed_log_likelihood(fam.build(params), d)
    _write(to_json({"family": fam.to_dict(), "params": params, "loglik": ll, "n": d.n}), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gfbgg", description="GFB-GG load-sharing frailty models")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a dataset (CSV y1,y2 plus JSON sidecar)")
    s.add_argument("--model", required=True, help="model id (M1..M45) or before/after/frailty")
    s.add_argument("--params", help="JSON object of parameter values (defaults: study truths)")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--replicate", type=int, default=0)
    s.add_argument("--out", default="-")
    s.add_argument("--sidecar", default=None)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit one model")
    f.add_argument("--model", required=True)
    _add_data_args(f)
    _add_fit_args(f)
    f.add_argument("--ci", choices=["none", "louis", "bootstrap"], default="none")
    f.add_argument("--boot-reps", type=int, default=1000)
    f.add_argument("--boot-mode", choices=["parametric", "nonparametric"], default="parametric")
    f.add_argument("--level", type=float, default=0.95)
    f.add_argument("--workers", type=int, default=1)
    f.add_argument("--trace", default=None, help="write per-iteration CSV here")
    f.add_argument("--format", choices=["json", "table"], default="json")
    f.add_argument("--out", default="-")
    f.set_defaults(func=cmd_fit)

    se = sub.add_parser("select", help="fit a candidate grid and rank by AIC/BIC/AICc/BC")
    _add_data_args(se)
    _add_fit_args(se)
    se.add_argument("--grid", default="27", help="27, 45 or comma-separated ids such as M1,M14")
    se.add_argument("--criteria", default="all")
    se.add_argument("--workers", type=int, default=1)
    se.add_argument("--format", choices=["json", "table"], default="json")
    se.add_argument("--out", default="-")
    se.set_defaults(func=cmd_select)

    st = sub.add_parser("study", help="simulation studies")
    st.add_argument("kind", choices=["params", "recovery"])
    st.add_argument("--design", help="JSON design file")
    st.add_argument("--workers", type=int, default=1)
    st.add_argument("--out-prefix", default=None)
    st.add_argument("--format", choices=["json", "table"], default="json")
    st.set_defaults(func=cmd_study)

    ll = sub.add_parser("loglik", help="observed log-likelihood at given parameters")
    ll.add_argument("--model", required=True)
    ll.add_argument("--params", help="JSON object of parameter values")
    _add_data_args(ll)
    ll.add_argument("--out", default="-")
    ll.set_defaults(func=cmd_loglik)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EvaluationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
