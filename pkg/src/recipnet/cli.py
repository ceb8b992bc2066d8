"""Command-line interface: ``recipnet {census,fit,simulate,coverage,qq,phase}``.

Exit status is 0 on success, 1 on invalid input (bad flags, files, configs or
parameters) and 2 when the model cannot be estimated (nonexistent MLE,
nonconvergence, unavailable inference).
"""

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .br import BrSparsitySpec, br_sample
from .estimators import BernoulliReciprocity, P15Model
from .exceptions import ModelError, ValidationError
from .graph import (CovariateSet, dyad_census, edges_from_flows, load_covariates, load_edge_list,
                    write_covariates, write_edge_list)
from .mc import load_config, run_coverage, run_phase_transition, run_qq, tomllib
from .p15 import p15_sample

WORKERS_ENV = "RECIPNET_WORKERS"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _default_workers():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _csv_list(text):
    return [s.strip() for s in text.split(",") if s.strip()] if text else []


def _float_list(text):
    try:
        return [float(s) for s in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _emit(text, output):
    if output in (None, "-"):
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(output).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")


def _table_stream(args):
    # keep stdout clean for the machine-readable document
    return sys.stdout if args.output not in (None, "-") else sys.stderr


def _rows_to_csv(rows):
    import io

    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def _node_labels(path, delimiter):
    with open(path, newline="", encoding="utf-8-sig") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValidationError(f"{path}: empty node file")
    return [r[0].strip() for r in rows[1:]]


def _load_graph(args):
    labels = _node_labels(args.nodes, args.delimiter) if getattr(args, "nodes", None) else None
    if args.from_flows:
        return edges_from_flows(args.edges, share=args.flow_share, volume=args.flow_volume,
                                delimiter=args.delimiter, labels=labels)
    return load_edge_list(args.edges, delimiter=args.delimiter, labels=labels)


def _add_graph_input(p):
    p.add_argument("edges", help="edge list 'source,target' (or a flow table with --from-flows)")
    p.add_argument("--nodes", help="node file; its first column fixes the node set (and holds X/Y covariates)")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--from-flows", action="store_true",
                   help="read EDGES as 'exporter,importer,value' and threshold it into a graph")
    p.add_argument("--flow-volume", choices=("exports", "total"), default="exports",
                   help="pair volume and denominator used when thresholding flows")
    p.add_argument("--flow-share", type=float, default=0.01)


def _add_output(p):
    p.add_argument("-o", "--output", help="output path (default: stdout)")
    p.add_argument("--format", choices=("json", "csv"), default="json")


# ---------------------------------------------------------------------------
# census


def cmd_census(args):
    g = _load_graph(args)
    census = dyad_census(g)
    doc = {**census.as_dict(), "n_edges": g.n_edges}
    _emit(json.dumps(doc, indent=2) if args.format == "json" else _rows_to_csv([doc]), args.output)
    return 0


# ---------------------------------------------------------------------------
# fit


def _roles(args):
    x, y, v = _csv_list(args.x_cols), _csv_list(args.y_cols), args.v_cols
    v = _csv_list(v) if v is not None else None
    if args.roles:
        try:
            with open(args.roles, "rb") as fh:
                doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"{args.roles}: {exc}") from None
        unknown = set(doc) - {"x", "y", "v"}
        if unknown:
            raise ValidationError(f"{args.roles}: unknown role keys {sorted(unknown)}")
        x = x or list(doc.get("x", []))
        y = y or list(doc.get("y", []))
        if v is None and "v" in doc:
            v = list(doc["v"])
    return x, y, v


def _fmt(x):
    return f"{x:.2f}"


def _print_table(rows, stream):
    header = ("Type", "Covariate", "Estimate", "Confidence Interval")
    body = [(r["type"], r["covariate"], _fmt(r["estimate"]),
             f"({_fmt(r['ci_lower'])}, {_fmt(r['ci_upper'])})" if "ci_lower" in r else "n/a") for r in rows]
    widths = [max(len(h), *(len(b[k]) for b in body)) for k, h in enumerate(header)]
    line = "  ".join(h.ljust(w) for h, w in zip(header, widths))
    print(line, file=stream)
    print("-" * len(line), file=stream)
    for b in body:
        print("  ".join([b[0].ljust(widths[0]), b[1].ljust(widths[1]), b[2].rjust(widths[2]), b[3]]), file=stream)


def _annotate_p15(doc, cov):
    labels = [("", "baseline (mu_n)"), ("", "mutual (tau_n)")]
    labels += [("X", name) for name in cov.x_names]
    labels += [("Y", name) for name in cov.y_names]
    labels += [("V", name) for name in cov.v_names]
    for row, (kind, name) in zip(doc["coefficients"], labels):
        row["type"], row["covariate"] = kind, name
    for row in doc["derived"]:
        row["type"], row["covariate"] = "", "reciprocity (rho_n)"
    return doc["coefficients"] + doc["derived"]


def _annotate_br(doc):
    names = {"mu_n": "baseline (mu_n)", "tau_n": "mutual (tau_n)", "rho_n": "reciprocity (rho_n)"}
    for row in doc["coefficients"]:
        row["type"], row["covariate"] = "", names[row["name"]]
    return doc["coefficients"]


def cmd_fit(args):
    if args.model == "p15" and not args.nodes:
        raise ValidationError("model p15 needs a node covariate file (--nodes)")
    g = _load_graph(args)
    if args.model == "br":
        est = BernoulliReciprocity(level=args.level).fit(g)
        doc = est.to_dict()
        rows = _annotate_br(doc)
    else:
        x, y, v = _roles(args)
        if args.dyads is None and v:
            raise ValidationError("dyad covariate columns given but no dyad file (--dyads)")
        cov = load_covariates(args.nodes, args.dyads, g, x, y, v if args.dyads else [],
                              delimiter=args.delimiter, center=args.center)
        est = P15Model(tol=args.tol, max_iter=args.max_iter, level=args.level,
                       check_conditioning=not args.no_conditioning_check, workers=args.workers)
        est.fit(g, cov)
        if est.se_ is None:
            raise ModelError("Hessian is singular at the estimate; inference unavailable")
        doc = est.to_dict()
        rows = _annotate_p15(doc, cov)
    if args.format == "json":
        text = json.dumps(doc, indent=2)
    else:
        keep = ("name", "type", "covariate", "estimate", "se", "z", "ci_lower", "ci_upper")
        text = _rows_to_csv([{k: r.get(k) for k in keep} for r in rows])
    _emit(text, args.output)
    _print_table(rows, _table_stream(args))
    return 0


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args):
    spec = BrSparsitySpec(args.a, args.b, args.mu, args.tau)
    out = Path(args.output)
    stem = out.with_suffix("")
    manifest = {"model": args.model, "n": args.n, "a": args.a, "b": args.b, "mu": args.mu,
                "tau": args.tau, "mu_n": spec.mu_n(args.n), "tau_n": spec.tau_n(args.n),
                "rho_n": spec.tau_n(args.n) - 2 * spec.mu_n(args.n), "seed": args.seed,
                "edges": out.name}
    nodes_path = Path(f"{stem}.nodes.csv")
    if args.model == "br":
        g = br_sample(args.n, spec, args.seed)
        with open(nodes_path, "w", encoding="utf-8") as fh:
            fh.write("node\n" + "".join(f"{lab}\n" for lab in g.labels))
    else:
        g1, g2, dl = args.gamma1, args.gamma2, args.delta
        rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(0,)))
        cov = CovariateSet.uniform(args.n, len(g1), len(g2), len(dl), rng=rng)
        if args.covariate_law == "centered_uniform":
            cov = cov.centered()
        g = p15_sample(args.n, spec, g1, g2, dl, cov, args.seed)
        dyads_path = Path(f"{stem}.dyads.csv") if cov.d3 else None
        write_covariates(cov, g, nodes_path, dyads_path)
        manifest.update(gamma1=g1, gamma2=g2, delta=dl, covariate_law=args.covariate_law,
                        x_cols=list(cov.x_names), y_cols=list(cov.y_names), v_cols=list(cov.v_names),
                        dyads=dyads_path.name if dyads_path else None)
    manifest["nodes"] = nodes_path.name
    write_edge_list(g, out)
    manifest["census"] = dyad_census(g).as_dict()
    manifest["n_edges"] = g.n_edges
    Path(f"{stem}.manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(manifest["census"]), file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# experiments


def _experiment_config(args):
    cfg = load_config(args.config)
    cfg.workers = args.workers
    if args.replicates is not None:
        if args.replicates < 1:
            raise ValidationError("--replicates must be positive")
        cfg.replicates = args.replicates
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _write_report(report, args, **json_kw):
    if args.format == "json":
        _emit(report.to_json(**json_kw), args.output)
    else:
        report.write_csv(args.output or "-")


def cmd_coverage(args):
    report = run_coverage(_experiment_config(args))
    _write_report(report, args, include_timing=args.timing)
    stream = _table_stream(args)
    for row in report.rows():
        cov = "nan" if row["coverage"] is None else f"{100 * row['coverage']:.1f}%"
        width = "nan" if row["median_width"] is None else f"{row['median_width']:.4f}"
        print(f"{row['coordinate']:>10}  coverage {cov:>6}  median width {width}  "
              f"band [{100 * row['band_lower']:.1f}%, {100 * row['band_upper']:.1f}%]", file=stream)
    if report.failures:
        print(f"failed replicates: {report.failures}", file=stream)
    return 0


def cmd_qq(args):
    result = run_qq(_experiment_config(args))
    _write_report(result, args)
    stream = _table_stream(args)
    for row in result.summary():
        print(f"{row['coordinate']:>10}  mean {row['mean']:+.3f}  sd {row['sd']:.3f}", file=stream)
    return 0


def cmd_phase(args):
    result = run_phase_transition(_experiment_config(args))
    _write_report(result, args)
    stream = _table_stream(args)
    for row in result.rows():
        print(f"a={row['a']:<5} b={row['b']:<5} corr(mu, rho) {row['corr_mu_rho']:+.3f} "
              f"(limit {row['theory_corr_mu_rho']:+.3f})", file=stream)
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="recipnet", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("census", help="count null, asymmetric and mutual dyads")
    _add_graph_input(p)
    _add_output(p)
    p.set_defaults(func=cmd_census)

    p = sub.add_parser("fit", help="fit the BR or p1.5 model")
    _add_graph_input(p)
    _add_output(p)
    p.add_argument("--model", choices=("br", "p15"), default="br")
    p.add_argument("--dyads", help="dyad covariate file 'node_a,node_b,<v-cols...>'")
    p.add_argument("--x-cols", help="comma-separated outgoingness columns of the node file")
    p.add_argument("--y-cols", help="comma-separated incomingness columns of the node file")
    p.add_argument("--v-cols", help="comma-separated dyad columns (default: all)")
    p.add_argument("--roles", help="TOML file with x = [...], y = [...], v = [...]")
    p.add_argument("--center", action="store_true", help="subtract empirical covariate means")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--workers", type=int, default=_default_workers())
    p.add_argument("--no-conditioning-check", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="simulate a network and write edges, covariates and a manifest")
    p.add_argument("--model", choices=("br", "p15"), default="br")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--b", type=float, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--gamma1", type=_float_list, default=[0.2])
    p.add_argument("--gamma2", type=_float_list, default=[0.4])
    p.add_argument("--delta", type=_float_list, default=[0.3])
    p.add_argument("--covariate-law", choices=("uniform", "centered_uniform"), default="uniform")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("-o", "--output", required=True, help="edge list path")
    p.set_defaults(func=cmd_simulate)

    for name, func, helptext in (("coverage", cmd_coverage, "confidence-interval coverage study"),
                                 ("qq", cmd_qq, "standardized estimates and QQ pairs"),
                                 ("phase", cmd_phase, "corr(mu_hat, rho_hat) across sparsity regimes")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="experiment config (TOML)")
        _add_output(p)
        p.add_argument("--workers", type=int, default=_default_workers())
        p.add_argument("--replicates", type=int, help="override the config's replicate count")
        p.add_argument("--seed", type=int, help="override the config's master seed")
        if name == "coverage":
            p.add_argument("--timing", action="store_true", help="include wall-clock time in JSON output")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "n", None) is not None and args.command == "simulate" and args.n < 2:
            raise ValidationError("--n must be at least 2")
        return args.func(args)
    except ModelError as exc:
        print(f"recipnet: model error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, OSError) as exc:
        print(f"recipnet: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
