"""Command-line interface orchestrating the full workflow.

Subcommands: simulate, engineer, pu-run, propensity, estimate, evaluate,
pipeline. Every run is reproducible: a master seed fans out to per-stage
seeds through a stage-name-keyed hash, so reconfiguring one stage leaves the
randomness of the others untouched. The pipeline writes only inside its
output directory and records every seed and config in a JSON manifest.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import data, effects, evalmetrics, propensity, pulearn, synthgen
from .errors import PUControlError

STAGES = ("generate", "engineer", "spy", "svm", "forest", "bootstrap")


def stage_seed(master_seed, stage):
    """Deterministic per-stage seed derived from the master seed."""
    digest = hashlib.sha256(f"{master_seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


class StageFailure(Exception):
    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


def _run_stage(stage, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PUControlError as exc:
        raise StageFailure(stage, exc) from exc


# ---------------------------------------------------------------------------
# config


DEFAULT_CONFIG = {
    "dataset": {"simulate": {"kind": "linear", "n": 1000}},
    "engineer": {"hide_fraction": 0.3},
    "pu": {
        "method": "SPY+iSVM",
        "feature_set": "X",
        "spy_fraction": 0.3,
        "threshold_quantile": 0.0,
        "svm_c": 1.0,
        "svm_tol": 1e-4,
        "svm_max_epochs": 1000,
        "max_iters": 50,
    },
    "trim": None,  # default depends on the dataset source
    "estimators": {
        "k": 1,
        "forest": {"n_trees": 200, "max_depth": 6, "min_leaf": 5,
                   "replicate_trees": 25},
    },
    "bootstrap": {"n_replicates": 1000},
    "histogram_bins": 10,
    "output_dir": ".",
    "master_seed": 0,
}


def _deep_update(base, override):
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_update(out[key], value)
        else:
            out[key] = value
    return out


def load_run_config(path=None, overrides=None):
    cfg = DEFAULT_CONFIG
    if path:
        cfg = _deep_update(cfg, json.loads(Path(path).read_text()))
    if overrides:
        cfg = _deep_update(cfg, overrides)
    return cfg


def _trim_config(cfg, simulated):
    if cfg.get("trim"):
        return propensity.TrimConfig(cfg["trim"]["lo"], cfg["trim"]["hi"])
    return propensity.SIMULATED_TRIM if simulated else propensity.REAL_DATA_TRIM


# ---------------------------------------------------------------------------
# shared pieces


def _load_dataset(cfg, master_seed):
    src = cfg["dataset"]
    if "simulate" in src:
        sim = dict(src["simulate"])
        sim.setdefault("seed", stage_seed(master_seed, "generate"))
        ds = _run_stage("simulate", synthgen.generate,
                        synthgen.SimConfig(kind=sim["kind"], n=sim.get("n", 1000),
                                           seed=sim["seed"]))
        return ds, True, sim
    csv = src["csv"]
    roles = csv.get("roles")
    if roles:
        ds = _run_stage("load", data.load_csv, csv["path"], roles)
    else:
        ds = _run_stage("load", data.load_csv_with_sidecar,
                        csv["path"], csv.get("sidecar"))
    return ds, False, dict(csv)


def _fit_propensity(dataset, groups, ids):
    z = dataset.features(dataset.adjustment_cols)
    sel = np.isin(dataset.unit_ids, ids)
    model = propensity.fit_logistic(z[sel], groups)
    return propensity.score_report(model, z[sel], groups, dataset.unit_ids[sel]), model


def _estimate_frame(estimates, meta):
    rows = []
    for est in estimates:
        row = dict(meta)
        row.update({
            "method": est.method,
            "n_treated": est.n_treated,
            "n_control": est.n_control,
            "ate": est.ate,
            "ci_lo": est.ci_lo,
            "ci_hi": est.ci_hi,
            "p_value": est.p_value,
        })
        rows.append(row)
    return pd.DataFrame(rows)


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def _split_to_csv(split, path):
    split.to_frame().to_csv(path, index=False)


def _split_from_csv(path, scores=None):
    frame = pd.read_csv(path)
    def ids(kind):
        return frame.loc[frame["assignment"] == kind, "unit_id"].to_numpy(dtype=int)
    trace = pd.DataFrame({
        "unit_id": frame["unit_id"].to_numpy(dtype=int),
        "nb_posterior": frame["score"].to_numpy(dtype=float),
        "svm_score": frame["score"].to_numpy(dtype=float),
    })
    return pulearn.PUSplit(
        positive_ids=ids("positive"),
        reliable_control_ids=ids("reliable_control"),
        remaining_unlabeled_ids=ids("unlabeled"),
        scores=scores if scores is not None else trace,
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args):
    seed = args.seed if args.seed is not None else stage_seed(args.master_seed, "generate")
    ds = _run_stage("simulate", synthgen.generate,
                    synthgen.SimConfig(kind=args.kind, n=args.n, seed=seed),
                    include_latents=args.debug)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data.write_csv(ds, out)
    print(f"wrote {out} ({ds.n_units} units) and role sidecar")
    return 0


def cmd_engineer(args):
    ds = _run_stage("load", data.load_csv_with_sidecar, args.data, args.roles)
    seed = args.seed if args.seed is not None else stage_seed(args.master_seed, "engineer")
    pu = _run_stage("engineer", data.engineer_pu, ds, args.hide_fraction, seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data.write_pu_csv(pu, out)
    n_pos = int((pu.s == 1).sum())
    print(f"wrote {out}: {n_pos} labeled positives, {pu.base.n_units - n_pos} unlabeled")
    return 0


def _pu_configs(cfg_pu, master_seed):
    spy_cfg = pulearn.SpyConfig(
        spy_fraction=cfg_pu["spy_fraction"],
        threshold_quantile=cfg_pu["threshold_quantile"],
        seed=stage_seed(master_seed, "spy"),
    )
    svm_cfg = pulearn.SVMConfig(
        C=cfg_pu["svm_c"], tol=cfg_pu["svm_tol"],
        max_epochs=cfg_pu["svm_max_epochs"],
        seed=stage_seed(master_seed, "svm"),
    )
    return spy_cfg, svm_cfg


def cmd_pu_run(args):
    pu = _run_stage("load", data.load_pu_csv, args.pu, args.roles)
    cfg_pu = {
        "spy_fraction": args.spy_fraction,
        "threshold_quantile": args.threshold_quantile,
        "svm_c": args.svm_c, "svm_tol": 1e-4, "svm_max_epochs": 1000,
    }
    spy_cfg, svm_cfg = _pu_configs(cfg_pu, args.master_seed)
    split = _run_stage("pu", pulearn.run_pu_pipeline, pu, method=args.method,
                       feature_set=args.feature_set, spy_cfg=spy_cfg,
                       svm_cfg=svm_cfg, max_iters=args.max_iters)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _split_to_csv(split, out)
    if split.model is not None:
        cols = (pu.base.adjustment_cols if args.feature_set == "Z"
                else pu.base.feature_cols)
        table = pulearn.export_coefficients(split.model, cols)
        table.to_csv(out.with_name(out.stem + "_coefficients.csv"), index=False)
    print(f"wrote {out}: {len(split.reliable_control_ids)} reliable controls, "
          f"{len(split.remaining_unlabeled_ids)} left unlabeled")
    return 0


def cmd_propensity(args):
    pu = _run_stage("load", data.load_pu_csv, args.pu, args.roles)
    split = _split_from_csv(args.split)
    ids = np.concatenate([split.positive_ids, split.reliable_control_ids])
    groups = np.concatenate([np.ones(len(split.positive_ids), dtype=int),
                             np.zeros(len(split.reliable_control_ids), dtype=int)])
    order = np.argsort(ids)
    report, _ = _run_stage("propensity", _fit_propensity, pu.base,
                           groups[order], ids[order])
    trimmed = _run_stage("trim", propensity.trim, report,
                         propensity.TrimConfig(args.trim_lo, args.trim_hi))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    trimmed.table.to_csv(out, index=False)
    hist = propensity.overlap_histogram(trimmed, n_bins=args.bins)
    hist.to_csv(out.with_name(out.stem + "_histogram.csv"), index=False)
    counts = trimmed.retained_counts()
    print(f"wrote {out}; retained {counts}")
    return 0


def _estimate_on(dataset, t, ids, cfg, master_seed, trim_cfg=None):
    """Propensity fit + optional trim + all four estimators over given units."""
    report, _ = _fit_propensity(dataset, t, ids)
    if trim_cfg is not None:
        report = _run_stage("trim", propensity.trim, report, trim_cfg)
    kept = report.table[report.table["retained"]]
    keep_ids = kept["unit_id"].to_numpy(dtype=int)
    sel = np.isin(dataset.unit_ids, keep_ids)
    scores = kept.set_index("unit_id")["score"]
    groups = kept.set_index("unit_id")["group"]
    uid = dataset.unit_ids[sel]
    y = dataset.outcome[sel]
    z = dataset.features(dataset.adjustment_cols)[sel]
    tt = (groups.loc[uid].to_numpy() == propensity.GROUP_TREATED).astype(int)
    ss = scores.loc[uid].to_numpy(dtype=float)

    est_cfg = cfg["estimators"]
    forest_cfg = effects.ForestConfig(seed=stage_seed(master_seed, "forest"),
                                      **est_cfg.get("forest", {}))
    boot = effects.BootstrapConfig(n_replicates=cfg["bootstrap"]["n_replicates"],
                                   seed=stage_seed(master_seed, "bootstrap"))
    return _run_stage("estimate", effects.estimate_all, y, tt, z, ss,
                      k=est_cfg.get("k", 1), forest_cfg=forest_cfg,
                      bootstrap=boot), report


def cmd_estimate(args):
    cfg = load_run_config(args.config)
    if args.bootstrap_replicates:
        cfg["bootstrap"]["n_replicates"] = args.bootstrap_replicates
    ds = _run_stage("load", data.load_csv_with_sidecar, args.data, args.roles)
    trim_cfg = None
    if args.trim_lo is not None and args.trim_hi is not None:
        trim_cfg = propensity.TrimConfig(args.trim_lo, args.trim_hi)
    estimates, _ = _estimate_on(ds, ds.treatment, ds.unit_ids, cfg,
                                args.master_seed, trim_cfg)
    frame = _estimate_frame(estimates, {"dataset": Path(args.data).stem,
                                        "pu_method": "real_controls",
                                        "feature_set": ""})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False)
    _write_json(out.with_suffix(".json"), frame.to_dict(orient="records"))
    print(frame.to_string(index=False))
    return 0


def cmd_evaluate(args):
    pu = _run_stage("load", data.load_pu_csv, args.pu, args.roles)
    if pu.hidden_truth is None:
        raise StageFailure("evaluate", "PU dataset carries no hidden truth")
    split = _split_from_csv(args.split)
    truth = dict(zip(pu.base.unit_ids.tolist(), pu.hidden_truth.tolist()))
    report = _run_stage("evaluate", evalmetrics.evaluate_split, split, truth,
                        metadata={"dataset": Path(args.pu).stem,
                                  "pu_method": args.method or "",
                                  "feature_set": args.feature_set or "",
                                  "n_positives": len(split.positive_ids)})
    frame = evalmetrics.report_frame([report])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False)
    print(frame.to_string(index=False))
    return 0


def run_pipeline(cfg):
    """Full workflow: data -> PU engineering -> PU selection -> propensity
    trim -> estimation -> evaluation. Returns the output manifest."""
    outdir = Path(cfg["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    master_seed = cfg["master_seed"]
    seeds = {stage: stage_seed(master_seed, stage) for stage in STAGES}

    dataset, simulated, source_meta = _load_dataset(cfg, master_seed)
    data.write_csv(dataset, outdir / "dataset.csv")

    pu = _run_stage("engineer", data.engineer_pu, dataset,
                    cfg["engineer"]["hide_fraction"], seeds["engineer"])
    data.write_pu_csv(pu, outdir / "pu_dataset.csv")
    assumptions = data.validate_pu_assumptions(pu)

    spy_cfg, svm_cfg = _pu_configs(cfg["pu"], master_seed)
    split = _run_stage("pu", pulearn.run_pu_pipeline, pu,
                       method=cfg["pu"]["method"],
                       feature_set=cfg["pu"]["feature_set"],
                       spy_cfg=spy_cfg, svm_cfg=svm_cfg,
                       max_iters=cfg["pu"]["max_iters"])
    _split_to_csv(split, outdir / "pu_split.csv")
    if split.model is not None:
        cols = (pu.base.adjustment_cols if cfg["pu"]["feature_set"] == "Z"
                else pu.base.feature_cols)
        pulearn.export_coefficients(split.model, cols).to_csv(
            outdir / "coefficients.csv", index=False)

    ids = np.concatenate([split.positive_ids, split.reliable_control_ids])
    groups = np.concatenate([np.ones(len(split.positive_ids), dtype=int),
                             np.zeros(len(split.reliable_control_ids), dtype=int)])
    order = np.argsort(ids)
    report, model = _run_stage("propensity", _fit_propensity, dataset,
                               groups[order], ids[order])
    trim_cfg = _trim_config(cfg, simulated)
    trimmed = _run_stage("trim", propensity.trim, report, trim_cfg)
    trimmed.table.to_csv(outdir / "propensity_report.csv", index=False)
    propensity.overlap_histogram(trimmed, n_bins=cfg["histogram_bins"]).to_csv(
        outdir / "propensity_histogram.csv", index=False)

    kept = trimmed.table[trimmed.table["retained"]]
    sel = np.isin(dataset.unit_ids, kept["unit_id"].to_numpy(dtype=int))
    uid = dataset.unit_ids[sel]
    tt = (kept.set_index("unit_id")["group"].loc[uid].to_numpy()
          == propensity.GROUP_TREATED).astype(int)
    ss = kept.set_index("unit_id")["score"].loc[uid].to_numpy(dtype=float)
    est_cfg = cfg["estimators"]
    forest_cfg = effects.ForestConfig(seed=seeds["forest"], **est_cfg.get("forest", {}))
    boot = effects.BootstrapConfig(n_replicates=cfg["bootstrap"]["n_replicates"],
                                   seed=seeds["bootstrap"])
    estimates = _run_stage("estimate", effects.estimate_all,
                           dataset.outcome[sel], tt,
                           dataset.features(dataset.adjustment_cols)[sel], ss,
                           k=est_cfg.get("k", 1), forest_cfg=forest_cfg,
                           bootstrap=boot)
    meta = {"dataset": source_meta.get("kind", source_meta.get("path", "csv")),
            "pu_method": cfg["pu"]["method"],
            "feature_set": cfg["pu"]["feature_set"]}
    table2 = _estimate_frame(estimates, meta)
    table2.to_csv(outdir / "table2.csv", index=False)
    _write_json(outdir / "table2.json", table2.to_dict(orient="records"))

    table1_path = None
    if pu.hidden_truth is not None:
        truth = dict(zip(dataset.unit_ids.tolist(), pu.hidden_truth.tolist()))
        eval_report = _run_stage("evaluate", evalmetrics.evaluate_split, split,
                                 truth, metadata={**meta,
                                                  "n_positives": len(split.positive_ids),
                                                  "n_spies": max(1, int(
                                                      cfg["pu"]["spy_fraction"]
                                                      * len(split.positive_ids)))})
        evalmetrics.report_frame([eval_report]).to_csv(outdir / "table1.csv",
                                                       index=False)
        table1_path = "table1.csv"

    manifest = {
        "config": cfg,
        "seeds": seeds,
        "assumptions": {
            "no_label_noise": assumptions.no_label_noise,
            "controls_in_unlabeled": assumptions.controls_in_unlabeled,
            "unlabeled_nonempty": assumptions.unlabeled_nonempty,
            "scar": assumptions.scar,
        },
        "trim": {"lo": trim_cfg.lo, "hi": trim_cfg.hi},
        "retained": trimmed.retained_counts(),
        "artifacts": {
            "dataset": "dataset.csv",
            "pu_dataset": "pu_dataset.csv",
            "pu_split": "pu_split.csv",
            "propensity_report": "propensity_report.csv",
            "propensity_histogram": "propensity_histogram.csv",
            "coefficients": "coefficients.csv" if split.model is not None else None,
            "table1": table1_path,
            "table2": "table2.csv",
        },
    }
    _write_json(outdir / "manifest.json", manifest)
    return manifest


def cmd_pipeline(args):
    overrides = {}
    if args.out:
        overrides["output_dir"] = args.out
    if args.master_seed is not None:
        overrides["master_seed"] = args.master_seed
    if args.kind:
        overrides["dataset"] = {"simulate": {"kind": args.kind, "n": args.n}}
    if args.data:
        overrides["dataset"] = {"csv": {"path": args.data, "sidecar": args.roles}}
    if args.method:
        overrides.setdefault("pu", {})["method"] = args.method
    if args.feature_set:
        overrides.setdefault("pu", {})["feature_set"] = args.feature_set
    if args.hide_fraction is not None:
        overrides["engineer"] = {"hide_fraction": args.hide_fraction}
    if args.trim_lo is not None and args.trim_hi is not None:
        overrides["trim"] = {"lo": args.trim_lo, "hi": args.trim_hi}
    if args.bootstrap_replicates:
        overrides["bootstrap"] = {"n_replicates": args.bootstrap_replicates}
    cfg = load_run_config(args.config, overrides)
    manifest = run_pipeline(cfg)
    print(json.dumps(manifest["retained"]))
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pucontrol",
        description="Control group construction from positive-unlabeled data "
                    "and downstream ATE estimation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a simulated dataset")
    p.add_argument("--kind", choices=synthgen.KINDS, required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--debug", action="store_true",
                   help="also export latent columns")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("engineer", help="hide treated units to build PU data")
    p.add_argument("--data", required=True)
    p.add_argument("--roles", default=None, help="role sidecar path")
    p.add_argument("--hide-fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_engineer)

    p = sub.add_parser("pu-run", help="run SPY / SPY+iSVM selection")
    p.add_argument("--pu", required=True, help="PU dataset CSV")
    p.add_argument("--roles", default=None)
    p.add_argument("--method", choices=pulearn.METHODS, default="SPY+iSVM")
    p.add_argument("--feature-set", choices=pulearn.FEATURE_SETS, default="X")
    p.add_argument("--spy-fraction", type=float, default=0.3)
    p.add_argument("--threshold-quantile", type=float, default=0.0)
    p.add_argument("--svm-c", type=float, default=1.0)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pu_run)

    p = sub.add_parser("propensity", help="fit propensity scores and trim")
    p.add_argument("--pu", required=True)
    p.add_argument("--roles", default=None)
    p.add_argument("--split", required=True, help="PU split CSV")
    p.add_argument("--trim-lo", type=float, default=0.1)
    p.add_argument("--trim-hi", type=float, default=0.6)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_propensity)

    p = sub.add_parser("estimate", help="estimate ATE from labeled data (no PU step)")
    p.add_argument("--data", required=True)
    p.add_argument("--roles", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--trim-lo", type=float, default=None)
    p.add_argument("--trim-hi", type=float, default=None)
    p.add_argument("--bootstrap-replicates", type=int, default=None)
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("evaluate", help="score a PU split against hidden truth")
    p.add_argument("--pu", required=True)
    p.add_argument("--roles", default=None)
    p.add_argument("--split", required=True)
    p.add_argument("--method", default=None)
    p.add_argument("--feature-set", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="run the full workflow from one config")
    p.add_argument("--config", default=None, help="JSON run config")
    p.add_argument("--kind", choices=synthgen.KINDS, default=None)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--data", default=None)
    p.add_argument("--roles", default=None)
    p.add_argument("--method", choices=pulearn.METHODS, default=None)
    p.add_argument("--feature-set", choices=pulearn.FEATURE_SETS, default=None)
    p.add_argument("--hide-fraction", type=float, default=None)
    p.add_argument("--trim-lo", type=float, default=None)
    p.add_argument("--trim-hi", type=float, default=None)
    p.add_argument("--bootstrap-replicates", type=int, default=None)
    p.add_argument("--master-seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageFailure as exc:
        print(f"error {exc}", file=sys.stderr)
        return 2
    except PUControlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
