"""Command-line entry point: simulate, fit, evaluate, ingest, baseline, bench."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .baselines import dbscan, kmeans
from .config import ConfigError, dump_yaml, ingest_settings, load_yaml, sampler_config, scheme_to_dict
from .ingest import ingest_csv
from .postprocess import (
    MixingMeasure,
    centered,
    cluster_number_posterior,
    dahl_configuration,
    mean_membership,
    mixing_measure_from_state,
    rand_index,
    wasserstein,
)
from .sampler import ChainRecord, SamplerError, run_chain
from .simbench import (
    DBSCAN_EPS,
    design,
    generate_design,
    marginal_vectors,
    run_replicates,
    summarize,
)
from .tensor import DIRECTION_NAMES, check_common_dims, load_dataset, save_dataset

log = logging.getLogger("mfmtensor")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
NAMES = [DIRECTION_NAMES[l] for l in (1, 2, 3)]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(obj, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _write_csv(rows, header, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _truth_dict(unit_ids, labels, measures):
    return {
        "unit_ids": list(unit_ids),
        "labels": [(np.asarray(z) + 1).tolist() for z in labels],
        "measures": [m.to_dict() for m in measures],
    }


# ---------------------------------------------------------------------------


def cmd_simulate(args):
    spec = design(args.design, args.n_units)
    out = Path(args.out)
    seeds = np.random.SeedSequence(args.seed).spawn(args.n_rep)
    for r, ss in enumerate(seeds):
        data_seed = int(ss.generate_state(1, dtype=np.uint32)[0])
        data, labels, measures = generate_design(spec, data_seed)
        rep_dir = out / f"rep{r:03d}"
        save_dataset(data, rep_dir / "dataset.json")
        truth = _truth_dict([t.unit_id for t in data], labels, measures)
        truth["data_seed"] = data_seed
        _write_json(truth, rep_dir / "truth.json")
    dump_yaml({"command": "simulate", "design": args.design, "n_rep": args.n_rep,
               "n_units": args.n_units, "seed": args.seed}, out / "config_echo.yaml")
    log.info("wrote %d replicate(s) of design %d to %s", args.n_rep, args.design, out)
    return EXIT_OK


def _dahl_outputs(chain, out, unit_ids, plots=True):
    samples = chain.post_burn_in()
    summary = {"directions": {}}
    hists, effects_hat = [], []
    effect_rows, hist_rows = [], []
    for l, name in enumerate(NAMES):
        label_samples = [s.labels[l] for s in samples]
        z, idx = dahl_configuration(label_samples)
        chosen = samples[idx]
        hist, mode = cluster_number_posterior(chain, l)
        hists.append(hist)
        _write_csv([[u, int(v) + 1] for u, v in zip(unit_ids, z)], ["unit_id", "cluster"],
                   out / f"labels_{name}.csv")
        mbar = mean_membership(label_samples)
        np.savetxt(out / f"membership_{name}.csv", mbar, delimiter=",", fmt="%.6g")
        E = chosen.effects[l]
        effects_hat.append(E)
        for c, row in enumerate(E):
            for b, g in enumerate(row):
                effect_rows.append([name, c + 1, b + 1, f"{g:.6g}", f"{np.exp(g):.6g}"])
        for k, f in hist.items():
            hist_rows.append([name, k, f"{f:.6g}"])
        summary["directions"][name] = {
            "dahl_index": int(idx) + chain.config.burn_in,
            "k_dahl": int(z.max()) + 1,
            "k_mode": int(mode),
            "k_histogram": {str(k): v for k, v in hist.items()},
            "cluster_sizes": np.bincount(z).tolist(),
            "measure": mixing_measure_from_state(chosen, l).to_dict(),
        }
        if plots:
            plotting.membership(mbar, out / f"membership_{name}.png")
    _write_csv(effect_rows, ["direction", "cluster", "bin", "log_gamma", "gamma"], out / "effects.csv")
    _write_csv(hist_rows, ["direction", "k", "frequency"], out / "k_histogram.csv")
    _write_csv([[i, f"{v:.10g}"] for i, v in enumerate(chain.log_posterior_trace)],
               ["sample", "log_posterior"], out / "trace.csv")
    _write_json(summary, out / "summary.json")
    if plots:
        plotting.k_histograms(hists, out / "k_histogram.png")
        plotting.trace(chain.log_posterior_trace, chain.config.burn_in, out / "trace.png")
        plotting.effect_profiles(effects_hat, out / "effects.png")
    return summary


def cmd_fit(args):
    try:
        data = load_dataset(args.data)
        check_common_dims(data)
    except (OSError, ValueError) as exc:
        raise UsageError(f"invalid dataset {args.data}: {exc}") from exc
    try:
        raw = load_yaml(args.config) if args.config else {}
        cfg = sampler_config(raw, args.seed)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_yaml(cfg.to_dict(), out / "config_echo.yaml")
    chain = run_chain(data, cfg)
    chain.to_jsonl(out / "chain.jsonl")
    _dahl_outputs(chain, out, [t.unit_id for t in data], plots=not args.no_plots)
    log.info("fit %d units, %d samples -> %s", len(data), len(chain.samples), out)
    return EXIT_OK


def _load_fit(fit_dir):
    fit_dir = Path(fit_dir)
    summary_path = fit_dir / "summary.json"
    if not summary_path.exists():
        raise FileNotFoundError(f"{fit_dir} is not a fit directory (no summary.json)")
    with open(summary_path) as fh:
        summary = json.load(fh)
    labels, unit_ids = [], None
    for name in NAMES:
        with open(fit_dir / f"labels_{name}.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        ids = [r["unit_id"] for r in rows]
        if unit_ids is not None and ids != unit_ids:
            raise ValueError(f"{fit_dir}: label files disagree on unit order")
        unit_ids = ids
        labels.append(np.array([int(r["cluster"]) for r in rows]))
    measures = [MixingMeasure.from_dict(summary["directions"][n]["measure"]) for n in NAMES]
    return unit_ids, labels, measures, summary


def cmd_evaluate(args):
    if (args.truth is None) == (args.other_fit is None):
        raise UsageError("give exactly one of --truth or --other-fit")
    unit_ids, labels, measures, summary = _load_fit(args.fit)
    if args.truth is not None:
        if not Path(args.truth).exists():
            raise FileNotFoundError(f"truth file not found: {args.truth}")
        with open(args.truth) as fh:
            truth = json.load(fh)
        ref_ids = truth.get("unit_ids", unit_ids)
        ref_labels = [np.asarray(z) for z in truth["labels"]]
        ref_measures = [MixingMeasure.from_dict(m) for m in truth["measures"]] if truth.get("measures") else None
    else:
        ref_ids, ref_labels, ref_measures, _ = _load_fit(args.other_fit)
    if list(ref_ids) != list(unit_ids):
        raise ValueError("fit and reference cover different units or a different unit order")
    report, rows = {}, []
    for l, name in enumerate(NAMES):
        if len(ref_labels[l]) != len(labels[l]):
            raise ValueError(f"{name}: label lengths differ ({len(labels[l])} vs {len(ref_labels[l])})")
        d = summary["directions"][name]
        entry = {
            "rand_index": rand_index(labels[l], ref_labels[l]) if len(labels[l]) > 1 else 1.0,
            "k_mode": d["k_mode"],
            "k_histogram": d["k_histogram"],
        }
        if ref_measures is not None:
            entry["wasserstein_to_truth"] = wasserstein(measures[l], ref_measures[l])
            entry["wasserstein_to_truth_centered"] = wasserstein(centered(measures[l]), centered(ref_measures[l]))
        report[name] = entry
        rows.append([name, f"{entry['rand_index']:.6g}", entry["k_mode"],
                     f"{entry.get('wasserstein_to_truth', float('nan')):.6g}",
                     f"{entry.get('wasserstein_to_truth_centered', float('nan')):.6g}"])
    out = Path(args.out)
    _write_json(report, out / "report.json")
    _write_csv(rows, ["direction", "rand_index", "k_mode", "wasserstein_to_truth",
                      "wasserstein_to_truth_centered"], out / "report.csv")
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_ingest(args):
    try:
        raw = load_yaml(args.scheme) if args.scheme else {}
        scheme, min_attempts, max_period, columns = ingest_settings(raw)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    if args.min_attempts is not None:
        min_attempts = args.min_attempts
    tensors, report = ingest_csv(args.csv, scheme, min_attempts, columns)
    out = Path(args.out)
    save_dataset(tensors, out)
    report_path = Path(args.report) if args.report else out.with_suffix(".rejections.json")
    _write_json(report.to_dict(), report_path)
    echo = scheme_to_dict(scheme)
    echo.update(min_attempts=min_attempts, max_period=max_period)
    if columns:
        echo["columns"] = columns
    dump_yaml(echo, out.with_suffix(".scheme_echo.yaml"))
    if tensors:
        cells = sum(t.counts for t in tensors).sum(axis=2)
        rows = [[a + 1, d + 1, int(cells[a, d])] for a in range(cells.shape[0]) for d in range(cells.shape[1])]
        _write_csv(rows, ["angle_bin", "distance_bin", "attempts"], out.with_suffix(".cells.csv"))
        if not args.no_plots:
            plotting.shot_chart(cells, scheme, out.with_suffix(".chart.png"), title="all players")
    if report.errors:
        log.warning("%d malformed row(s) skipped; see %s", len(report.errors), report_path)
    log.info("%d players, %d accepted events", report.n_players, report.accepted_events)
    return EXIT_OK


def cmd_baseline(args):
    data = load_dataset(args.data)
    ks = args.k
    if args.k_from_fit:
        with open(Path(args.k_from_fit) / "summary.json") as fh:
            s = json.load(fh)
        ks = [s["directions"][n]["k_dahl"] for n in NAMES]
    if ks is None:
        raise UsageError("give --k (three values) or --k-from-fit")
    if len(ks) == 1:
        ks = ks * 3
    if len(ks) != 3:
        raise UsageError("--k takes one or three values")
    truth = None
    if args.truth:
        with open(args.truth) as fh:
            truth = [np.asarray(z) for z in json.load(fh)["labels"]]
    out = Path(args.out)
    rows, ri_rows = [], []
    methods = ["kmeans"] + [f"dbscan-{e:g}" for e in args.eps]
    for l, name in enumerate(NAMES):
        vecs = marginal_vectors(data, l + 1)
        results = {"kmeans": kmeans(vecs, ks[l], seed=args.seed + l)}
        for e in args.eps:
            results[f"dbscan-{e:g}"] = dbscan(vecs, e, args.min_pts)
        for i, t in enumerate(data):
            rows.append([name, t.unit_id] + [int(results[m][i]) + 1 for m in methods])
        if truth is not None:
            for m in methods:
                ri_rows.append([m, name, f"{rand_index(results[m], truth[l]):.6g}"])
    _write_csv(rows, ["direction", "unit_id"] + methods, out / "baseline_labels.csv")
    if ri_rows:
        _write_csv(ri_rows, ["method", "direction", "rand_index"], out / "baseline_ri.csv")
    dump_yaml({"command": "baseline", "k": list(ks), "eps": list(args.eps),
               "min_pts": args.min_pts, "seed": args.seed}, out / "config_echo.yaml")
    return EXIT_OK


def cmd_bench(args):
    try:
        raw = load_yaml(args.config) if args.config else {"preset": "desk"}
        cfg = sampler_config(raw, args.seed)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    spec = design(args.design, args.n_units)
    results = run_replicates(spec, args.n_rep, cfg, args.seed, workers=args.workers,
                             min_pts=args.min_pts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "replicates.jsonl", "w") as fh:
        for r in results:
            fh.write(json.dumps(r.to_dict()) + "\n")
    true_k = [len(s) for s in spec.cluster_sizes]
    rows = summarize(results, true_k)
    _write_json(rows, out / "summary.json")
    _write_csv([[r["method"], r["direction"], f"{r['mean_ri']:.6g}", f"{r['sd_ri']:.6g}",
                 f"{r['pct_correct_k']:.6g}"] for r in rows],
               ["method", "direction", "mean_ri", "sd_ri", "pct_correct_k"], out / "summary.csv")
    echo = cfg.to_dict()
    echo.pop("seed")
    dump_yaml({"command": "bench", "design": args.design, "n_rep": args.n_rep, "seed": args.seed,
               "sampler": echo}, out / "config_echo.yaml")
    ok = [r for r in results if r.error is None]
    if ok and not args.no_plots:
        plotting.ri_boxplots({m: [r.ri[m] for r in ok] for m in ok[0].ri}, out / "ri_boxplots.png")
        pooled = []
        for l in range(3):
            ks = [r.k_mode[l] for r in ok]
            vals, cnt = np.unique(ks, return_counts=True)
            pooled.append({int(k): c / len(ks) for k, c in zip(vals, cnt)})
        plotting.k_histograms(pooled, out / "k_mode_histogram.png", true_k=true_k)
    for r in rows:
        print(f"{r['method']:>12} {r['direction']:>9} mean RI {r['mean_ri']:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mfmtensor", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate synthetic datasets with ground truth")
    s.add_argument("--design", type=int, choices=(0, 1, 2), required=True)
    s.add_argument("--n-rep", type=int, default=1)
    s.add_argument("--n-units", type=int, default=150)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", help="run the sampler and summarise the chain")
    s.add_argument("--data", required=True)
    s.add_argument("--config", help="YAML sampler config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("evaluate", help="compare a fit with truth or another fit")
    s.add_argument("--fit", required=True)
    s.add_argument("--truth")
    s.add_argument("--other-fit")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ingest", help="bin shot events into count tensors")
    s.add_argument("--csv", required=True)
    s.add_argument("--scheme", help="YAML partition/filter config")
    s.add_argument("--out", required=True, help="dataset JSON path")
    s.add_argument("--report", help="rejection report path")
    s.add_argument("--min-attempts", type=int)
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("baseline", help="k-means and DBSCAN on marginal count vectors")
    s.add_argument("--data", required=True)
    s.add_argument("--k", type=int, nargs="+")
    s.add_argument("--k-from-fit")
    s.add_argument("--eps", type=float, nargs="+", default=list(DBSCAN_EPS))
    s.add_argument("--min-pts", type=int, default=5)
    s.add_argument("--truth")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("bench", help="replicate study with summary table and figures")
    s.add_argument("--design", type=int, choices=(0, 1, 2), required=True)
    s.add_argument("--n-rep", type=int, default=10)
    s.add_argument("--n-units", type=int, default=150)
    s.add_argument("--config", help="YAML sampler config (default: desk preset)")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--min-pts", type=int, default=5)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mfmtensor {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, SamplerError, RuntimeError) as exc:
        print(f"mfmtensor {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
