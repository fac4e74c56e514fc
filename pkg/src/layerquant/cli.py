"""Command-line entry point: ``layerquant <subcommand> ...``.

Subcommands: synth, metrics, detect, plan, mxq, quantize, report. Every
stage is deterministic given its flags; exit status is 0 on success, 1 on a
data or model error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import sys

from . import __version__
from .allocator import (MAX_STOP, MEGABYTE, MENU, CostTable, build_cost_table, plan_ablation, plan_boost,
                        plan_from_layers, read_plan_csv, solve_mxq, write_plan_csv)
from .errors import LayerQuantError
from .metrics import model_kurtosis, model_sensitivity, synthetic_input
from .outlier_detect import DetectParams, detect_outliers
from .quant_core import HqSolverParams, QuantConfig, quantize, save_quantized
from .report import (parse_pairs, ppl_vs_memory, read_memory_csv, read_results_csv, score_wtl,
                     write_ppl_mem_csv, write_wtl_csv, DEFAULT_PAIRS)
from .tensor_io import (format_key, group_by_module, load_model, read_metrics_csv, save_model, synth_model,
                        write_metrics_csv)

DEFAULT_SEED = 0


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _add_solver_flags(p):
    g = p.add_argument_group("HQQ solver")
    d = HqSolverParams()
    g.add_argument("--p", type=float, default=d.p, help="L_p exponent of the error norm")
    g.add_argument("--beta0", type=float, default=d.beta0, help="initial half-quadratic penalty")
    g.add_argument("--kappa", type=float, default=d.kappa, help="penalty growth factor per iteration")
    g.add_argument("--iters", type=int, default=d.iters, help="maximum solver iterations")
    g.add_argument("--early-stop-tol", type=float, default=d.early_stop_tol,
                   help="stop once the relative objective improvement falls below this")
    g.add_argument("--method", choices=("rtn", "hqq"), default="hqq", help="quantization method")


def _add_detect_flags(p):
    g = p.add_argument_group("outlier detection")
    d = DetectParams()
    g.add_argument("--mode", choices=("auto", "subtract", "divide"), default="auto",
                   help="jump series; auto = divide for kurtosis, subtract for sensitivity")
    g.add_argument("--top-m", type=int, default=0, help="keep at most m outliers per module (0 = all)")
    g.add_argument("--z", type=float, default=d.z_threshold, help="z-score threshold (strict)")
    g.add_argument("--trim", type=float, default=d.trim_fraction, help="fraction trimmed from each end")
    g.add_argument("--sigma", choices=("sample", "sqrt_ss"), default=d.sigma,
                   help="spread estimator: n-1 sample std, or sqrt(SS)/(n-1)")
    g.add_argument("--rank-by", choices=("d", "z"), default=d.rank_by,
                   help="order outliers by raw jump or by z-score")


def _solver(args):
    return HqSolverParams(args.p, args.beta0, args.kappa, args.iters, args.early_stop_tol)


def _detect_params(args, metric_name):
    mode = args.mode
    if mode == "auto":
        mode = "divide" if metric_name == "kurtosis" else "subtract"
    return DetectParams(mode, args.top_m, args.z, args.trim, args.sigma, args.rank_by)


def _metric_name(rows):
    names = {r.metric_name for r in rows}
    if len(names) != 1:
        raise LayerQuantError(f"expected rows for exactly one metric, found {sorted(names) or 'none'}")
    return names.pop()


def _parse_plant(text):
    layer, sep, module = text.partition(":")
    if not sep:
        raise argparse.ArgumentTypeError(f"planted entry {text!r} must look like LAYER:MODULE")
    return int(layer), module


def _compute_metrics(bundle, args):
    if args.metric == "kurtosis":
        return model_kurtosis(bundle)
    cols = {e.matrix.shape[1] for e in bundle}
    if len(cols) != 1:
        raise LayerQuantError("sensitivity with a synthetic input needs one shared input dimension")
    X = synthetic_input(cols.pop(), seed=args.calib_seed, tokens=args.tokens)
    return model_sensitivity(bundle, QuantConfig.parse(args.config), X, method=args.method, params=_solver(args))


def _summary(plan):
    return {"achieved_bits_per_param": plan.achieved_bits_per_param,
            "memory_delta_pct": plan.memory_delta_pct,
            "total_bits": plan.total_bits,
            "objective": plan.objective,
            "boosted": [format_key(*k) for k in sorted(plan.boosted)]}


def _emit_plan(plan, args):
    with _output(args.out) as fh:
        write_plan_csv(plan, fh)
    summary = _summary(plan)
    if args.out not in (None, "-"):
        with open(args.out + ".json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(json.dumps(summary, sort_keys=True), file=sys.stderr)


# -- subcommands --------------------------------------------------------------

def cmd_synth(args):
    bundle = synth_model(args.layers, args.modules.split(","), args.rows, args.cols, args.plant or (),
                         args.tail_scale, args.seed, name=args.name)
    save_model(bundle, args.output)


def cmd_metrics(args):
    bundle = load_model(args.model)
    rows = _compute_metrics(bundle, args)
    with _output(args.out) as fh:
        write_metrics_csv(rows, fh)


def cmd_detect(args):
    rows = read_metrics_csv(args.metrics)
    params = _detect_params(args, _metric_name(rows))
    with _output(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["module_name", "layer_index", "z", "d"])
        for module, mrows in group_by_module(rows).items():
            res = detect_outliers([r.value for r in mrows], params)
            for pos in res.layer_indices:
                w.writerow([module, mrows[pos].layer_index, format(float(res.zscores[pos - 1]), ".17g"),
                            format(float(res.diffs[pos - 1]), ".17g")])


def cmd_plan(args):
    bundle = load_model(args.model)
    if args.ablation:
        if not (args.sensi_metrics and args.kurt_metrics):
            raise LayerQuantError("--ablation needs both --sensi-metrics and --kurt-metrics")
        sens = read_metrics_csv(args.sensi_metrics)
        kurt = read_metrics_csv(args.kurt_metrics)
        sp = plan_boost(bundle, sens, args.base_stop, args.stops, params=_detect_params(args, "sensitivity"))
        kp = plan_boost(bundle, kurt, args.base_stop, args.stops, params=_detect_params(args, "kurtosis"))
        chosen = {}
        for mi, module in enumerate(bundle.modules):
            s_layers = {l for l, m in sp.boosted if m == module}
            k_layers = {l for l, m in kp.boosted if m == module}
            js, jk = plan_ablation(bundle, s_layers, k_layers, seed=args.seed + mi)
            chosen[module] = sorted(js if args.ablation == "sb" else jk)
        plan = plan_from_layers(bundle, chosen, args.base_stop, args.stops)
    else:
        if args.metrics:
            rows = read_metrics_csv(args.metrics)
        elif args.metric:
            rows = _compute_metrics(bundle, args)
        else:
            raise LayerQuantError("plan needs --metrics CSV or --metric {kurtosis,sensitivity}")
        params = _detect_params(args, _metric_name(rows))
        plan = plan_boost(bundle, rows, args.base_stop, args.stops, params=params,
                          shared_series=args.shared_series)
    _emit_plan(plan, args)


def cmd_mxq(args):
    megabyte = MEGABYTE if args.megabyte == "binary" else 10 ** 6
    if args.cost_table:
        table = CostTable.read_csv(args.cost_table)
    else:
        if not args.model:
            raise LayerQuantError("mxq needs a model container or --cost-table")
        table = build_cost_table(load_model(args.model), MENU, args.method, _solver(args), jobs=args.jobs)
    if args.cost_out:
        table.write_csv(args.cost_out)
    if (args.budget_mb is None) == (args.budget_bpp is None):
        raise LayerQuantError("give exactly one of --budget-mb or --budget-bpp")
    budget_mb = args.budget_mb
    if budget_mb is None:
        budget_mb = args.budget_bpp * sum(table.counts) / (8 * megabyte)
    plan = solve_mxq(table, budget_mb, megabyte=megabyte, base_stop=args.base_stop)
    _emit_plan(plan, args)


def cmd_quantize(args):
    bundle = load_model(args.input)
    if (args.config is None) == (args.plan is None):
        raise LayerQuantError("give exactly one of --config or --plan")
    if args.plan:
        assignments, _ = read_plan_csv(args.plan)
    else:
        cfg = QuantConfig.parse(args.config)
        assignments = {e.key: cfg for e in bundle}
    params = _solver(args)
    out = {}
    for e in bundle:
        if e.key not in assignments:
            raise LayerQuantError(f"plan has no configuration for {format_key(*e.key)}")
        out[format_key(*e.key)] = quantize(e.matrix, assignments[e.key], args.method, params, meta=args.meta)
    save_quantized(out, args.output, extra={"method": args.method, "solver": vars(params) if args.method == "hqq"
                                            else None})


def cmd_report(args):
    records = read_results_csv(args.results)
    with _output(args.out) as fh:
        if args.kind == "wtl":
            pairs = parse_pairs(args.pairs) if args.pairs else DEFAULT_PAIRS
            write_wtl_csv(score_wtl(records, pairs), fh)
        else:
            if not args.memory:
                raise LayerQuantError("ppl-mem needs --memory CSV")
            write_ppl_mem_csv(ppl_vs_memory(records, read_memory_csv(args.memory)), fh)


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="layerquant", formatter_class=fmt,
                                     description="Layer-sensitive quantization planning on raw weight matrices.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="random seed")
        p.add_argument("--jobs", type=int, default=1, help="worker threads for per-matrix work")
        p.add_argument("--out", default=None, help="output file (default: stdout)")

    p = sub.add_parser("synth", help="write a synthetic model container", formatter_class=fmt)
    p.add_argument("output")
    p.add_argument("--layers", type=int, default=16)
    p.add_argument("--modules", default="q_proj,k_proj,v_proj,o_proj")
    p.add_argument("--rows", type=int, default=256)
    p.add_argument("--cols", type=int, default=256)
    p.add_argument("--plant", type=_parse_plant, action="append", help="LAYER:MODULE to make heavy-tailed")
    p.add_argument("--tail-scale", type=float, default=50.0)
    p.add_argument("--name", default="synthetic")
    common(p)
    p.set_defaults(func=cmd_synth)

    def metric_flags(p, required):
        p.add_argument("--metric", choices=("kurtosis", "sensitivity"), required=required)
        p.add_argument("--config", default="4,64,8,128", help="quantization config for sensitivity")
        p.add_argument("--calib-seed", type=int, default=DEFAULT_SEED, help="seed of the synthetic calibration X")
        p.add_argument("--tokens", type=int, default=128, help="calibration tokens (rows of X)")

    p = sub.add_parser("metrics", help="compute kurtosis or sensitivity metrics", formatter_class=fmt)
    p.add_argument("model")
    metric_flags(p, True)
    _add_solver_flags(p)
    common(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("detect", help="flag sensitive layers in a metrics CSV", formatter_class=fmt)
    p.add_argument("metrics")
    _add_detect_flags(p)
    common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("plan", help="boosted allocation plan (or its ablation)", formatter_class=fmt)
    p.add_argument("model")
    p.add_argument("--metrics", help="metrics CSV to plan from")
    metric_flags(p, False)
    p.add_argument("--base-stop", type=int, default=6, help=f"menu stop 0..{MAX_STOP} for normal layers")
    p.add_argument("--stops", type=int, default=2, help="boost stops for sensitive layers")
    p.add_argument("--shared-series", action="store_true",
                   help="detect once on the per-layer mean across modules")
    p.add_argument("--ablation", choices=("sb", "kb"),
                   help="random layers avoiding both methods' picks, sized like the named method's")
    p.add_argument("--sensi-metrics", help="sensitivity CSV (ablation)")
    p.add_argument("--kurt-metrics", help="kurtosis CSV (ablation)")
    _add_detect_flags(p)
    _add_solver_flags(p)
    common(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("mxq", help="globally optimal allocation under a memory budget", formatter_class=fmt)
    p.add_argument("model", nargs="?")
    p.add_argument("--cost-table", help="reuse a cost-table CSV instead of quantizing")
    p.add_argument("--cost-out", help="write the cost table CSV here")
    p.add_argument("--budget-mb", type=float, help="total budget in megabytes")
    p.add_argument("--budget-bpp", type=float, help="total budget as average bits per parameter")
    p.add_argument("--megabyte", choices=("binary", "decimal"), default="binary",
                   help="binary: 1 MB = 2**20 bytes; decimal: 10**6 bytes")
    p.add_argument("--base-stop", type=int, default=None, help="report memory delta against this uniform stop")
    _add_solver_flags(p)
    common(p)
    p.set_defaults(func=cmd_mxq)

    p = sub.add_parser("quantize", help="quantize a model container", formatter_class=fmt)
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--config", help="b1,g1[,b2,g2] applied to every matrix")
    p.add_argument("--plan", help="plan CSV with per-matrix configs")
    p.add_argument("--meta", action="store_true", help="8-bit quantize scales and zeros")
    _add_solver_flags(p)
    common(p)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("report", help="win-tie-loss and perplexity-vs-memory tables", formatter_class=fmt)
    p.add_argument("kind", choices=("wtl", "ppl-mem"))
    p.add_argument("results", help="results CSV")
    p.add_argument("--pairs", help="primary:comparator list, e.g. sb:hqq,kb:mxq")
    p.add_argument("--memory", help="memory CSV for ppl-mem")
    common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (LayerQuantError, ValueError, OSError, KeyError) as exc:
        print(f"layerquant {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


run = main

if __name__ == "__main__":
    sys.exit(main())
