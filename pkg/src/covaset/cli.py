"""Command-line interface.

Subcommands: synth, featurize, triplets, train, evaluate, trials, covdep,
embed, project, align, sweep. Every subcommand accepts --config pointing at
a JSON file whose keys match the long flag names (underscored); explicit
flags override file values. The fully resolved configuration is echoed to
stderr as one JSON line for provenance; given that echo and the input
files, every run is deterministic.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    CohortDataset,
    ensure_binarized,
    load_cohort,
    stratified_splits,
)
from .errors import DataError, NumericError
from .evaluation import (
    covariate_dependency,
    embed_samples,
    embedding_alignment,
    evaluate_split,
    pca_project,
    sweep,
)
from .rff import RffConfig, compute_signatures, read_signatures, write_signatures
from .setnet import SetEncoderConfig, load_checkpoint, save_checkpoint
from .synth import SynthConfig, generate_cohort, write_cohort
from .training import LossConfig, TrainConfig, fit
from .triplets import TripletConfig, read_triplets, select_triplets, write_triplets

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; the contract here is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_csv(path, header, rows) -> None:
    import csv

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge CLI flags over config-file values over defaults."""
    cfg_file = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise DataError(f"config file not found: {path}")
        with open(path) as fh:
            cfg_file = json.load(fh)
        unknown = set(cfg_file) - set(defaults)
        if unknown:
            raise UsageError(
                f"unknown config keys {sorted(unknown)}; valid: {sorted(defaults)}"
            )
    resolved = {}
    for key, default in defaults.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in cfg_file:
            resolved[key] = cfg_file[key]
        else:
            resolved[key] = default
    return resolved


def _echo(command: str, resolved: dict) -> None:
    print(json.dumps({"command": command, **resolved}, sort_keys=True), file=sys.stderr)


def _parse_grid(text, cast):
    return [cast(tok) for tok in str(text).split(",") if tok != ""]


def _apply_binarize(cohort: CohortDataset, covariate: str, rule) -> CohortDataset:
    try:
        return ensure_binarized(cohort, covariate, rule)
    except DataError as exc:
        if "binarization rule" in str(exc):
            raise DataError(
                f"covariate {covariate!r} is continuous; pass --binarize "
                f"median or --binarize <threshold>"
            ) from None
        raise


def _split_for(cohort, resolved):
    plans = stratified_splits(
        cohort, resolved["trial"] + 1, resolved["test_fraction"], resolved["seed"]
    )
    return plans[resolved["trial"]]


def _train_components(cohort, resolved):
    n = len(cohort.marker_panel)
    net_cfg = SetEncoderConfig(
        input_dim=n,
        block_widths=tuple(_parse_grid(resolved["block_widths"], int)),
        embed_dim=resolved["embed_dim"],
        set_size=resolved["set_size"],
        seed=resolved["seed"],
    )
    loss_cfg = LossConfig(alpha=resolved["alpha"], margin=resolved["margin"])
    train_cfg = TrainConfig(
        learning_rate=resolved["learning_rate"],
        batch_size=resolved["batch_size"],
        epochs=resolved["epochs"],
        set_size=resolved["set_size"],
        seed=resolved["seed"],
        steps_per_epoch=resolved["steps_per_epoch"],
    )
    return net_cfg, loss_cfg, train_cfg


_TRAIN_DEFAULTS = {
    "alpha": 0.5,
    "margin": 1.0,
    "learning_rate": 0.0001,
    "batch_size": 200,
    "epochs": 30,
    "steps_per_epoch": 1,
    "set_size": 200,
    "block_widths": "64,64",
    "embed_dim": 32,
    "test_fraction": 0.25,
    "trial": 0,
    "seed": 0,
}

_RFF_DEFAULTS = {"rff_d": 2048, "rff_gamma": 1.0, "rff_pool": "median"}

_TRIPLET_DEFAULTS = {"h_s": 60, "h_d": 60, "max_per_reference": 1, "binarize": None}


def _add_train_flags(p):
    p.add_argument("--alpha", type=float, help="BCE/triplet trade-off in [0,1]")
    p.add_argument("--margin", type=float, help="triplet margin offset")
    p.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
    p.add_argument("--batch-size", type=int, help="set instances per batch")
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps-per-epoch", type=int)
    p.add_argument("--set-size", type=int, help="cells per set instance")
    p.add_argument("--block-widths", help="comma list of per-cell layer widths")
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--trial", type=int, help="split index under the base seed")


def _add_rff_flags(p):
    p.add_argument("--rff-d", type=int, help="signature dimension (even)")
    p.add_argument("--rff-gamma", type=float, help="Gaussian kernel width")
    p.add_argument("--rff-pool", choices=["median", "max"])


def _add_triplet_flags(p):
    p.add_argument("--h-s", type=int, help="same-pair distance quantile (20..80)")
    p.add_argument("--h-d", type=int, help="margin quantile (20..80)")
    p.add_argument("--max-per-reference", type=int)
    p.add_argument("--binarize", help="'median' or a numeric threshold")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="covaset", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config")
    p.add_argument("--n-samples", type=int)
    p.add_argument("--cells-per-sample", type=int)
    p.add_argument("--n-markers", type=int)
    p.add_argument("--effect-size", type=float)
    p.add_argument("--signal-fraction", type=float)
    p.add_argument("--phi", type=float, help="P(covariate == outcome)")
    p.add_argument("--covariate-name")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("featurize", help="pooled RFF signature per sample")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    _add_rff_flags(p)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("triplets", help="mine covariate triplets")
    p.add_argument("--manifest", required=True)
    p.add_argument("--signatures", required=True)
    p.add_argument("--covariate", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    _add_triplet_flags(p)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--trial", type=int,
                   help="restrict mining to this split's training samples")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="fit the set encoder")
    p.add_argument("--manifest", required=True)
    p.add_argument("--triplets", help="triplets CSV (omit for a BCE-only run)")
    p.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p.add_argument("--log", required=True, help="output training-log CSV")
    p.add_argument("--config")
    _add_train_flags(p)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("evaluate", help="metrics on a split's test samples")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.add_argument("--config")
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--trial", type=int)
    p.add_argument("--eval-subsets", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("trials", help="repeated randomized split evaluation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--covariate", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--n-trials", type=int)
    p.add_argument("--eval-subsets", type=int)
    _add_rff_flags(p)
    _add_triplet_flags(p)
    _add_train_flags(p)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("covdep", help="covariate-outcome dependency table")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--covariates", help="comma list (default: all)")
    p.add_argument("--binarize", help="'median' or a numeric threshold")

    p = sub.add_parser("embed", help="per-sample embeddings from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")

    p = sub.add_parser("project", help="2-D PCA of per-sample embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")

    p = sub.add_parser("align", help="Same/Diff covariate embedding distances")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--covariate", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--delta", type=float, help="max raw gap counted as Same")
    p.add_argument("--n-pairs", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("sweep", help="grid over H_s, H_d and alpha")
    p.add_argument("--manifest", required=True)
    p.add_argument("--covariate", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--h-s-grid")
    p.add_argument("--h-d-grid")
    p.add_argument("--alpha-grid")
    p.add_argument("--trials", type=int)
    p.add_argument("--eval-subsets", type=int)
    p.add_argument("--binarize", help="'median' or a numeric threshold")
    _add_rff_flags(p)
    _add_train_flags(p)
    p.add_argument("--seed", type=int)

    return parser


def _cmd_synth(args):
    resolved = _resolve(args, {
        "out": None, "n_samples": 40, "cells_per_sample": 500, "n_markers": 10,
        "effect_size": 1.0, "signal_fraction": 0.5, "phi": 0.9,
        "covariate_name": "cov", "seed": 0,
    })
    _echo("synth", resolved)
    cfg = SynthConfig(
        n_samples=resolved["n_samples"],
        cells_per_sample=resolved["cells_per_sample"],
        n_markers=resolved["n_markers"],
        effect_size=resolved["effect_size"],
        signal_fraction=resolved["signal_fraction"],
        covariate_alignment=resolved["phi"],
        seed=resolved["seed"],
    )
    cohort = generate_cohort(cfg, covariate_name=resolved["covariate_name"])
    manifest = write_cohort(cohort, resolved["out"])
    print(manifest)


def _rff_config(resolved) -> RffConfig:
    return RffConfig(
        d=resolved["rff_d"],
        gamma=resolved["rff_gamma"],
        pooling=resolved["rff_pool"],
        seed=resolved["seed"],
    )


def _cmd_featurize(args):
    resolved = _resolve(args, {"manifest": None, "out": None, "seed": 0, **_RFF_DEFAULTS})
    _echo("featurize", resolved)
    cohort = load_cohort(resolved["manifest"])
    sigs = compute_signatures(cohort, _rff_config(resolved))
    write_signatures(sigs, resolved["out"])


def _cmd_triplets(args):
    resolved = _resolve(args, {
        "manifest": None, "signatures": None, "covariate": None, "out": None,
        "test_fraction": None, "trial": None, "seed": 0, **_TRIPLET_DEFAULTS,
    })
    _echo("triplets", resolved)
    cohort = load_cohort(resolved["manifest"])
    if resolved["trial"] is not None:
        tf = resolved["test_fraction"] if resolved["test_fraction"] is not None else 0.25
        split = stratified_splits(
            cohort, resolved["trial"] + 1, tf, resolved["seed"]
        )[resolved["trial"]]
        cohort = cohort.restrict(split.train_ids)
    cohort = _apply_binarize(cohort, resolved["covariate"], resolved["binarize"])
    sigs = [
        s for s in read_signatures(resolved["signatures"])
        if s.sample_id in set(cohort.sample_ids)
    ]
    cfg = TripletConfig(
        covariate=resolved["covariate"],
        h_s=resolved["h_s"],
        h_d=resolved["h_d"],
        max_per_reference=resolved["max_per_reference"],
    )
    trips = select_triplets(cohort, sigs, cfg)
    write_triplets(trips, resolved["out"])


def _cmd_train(args):
    resolved = _resolve(args, {
        "manifest": None, "triplets": None, "checkpoint": None, "log": None,
        **_TRAIN_DEFAULTS,
    })
    _echo("train", resolved)
    cohort = load_cohort(resolved["manifest"])
    split = _split_for(cohort, resolved)
    trips = read_triplets(resolved["triplets"]) if resolved["triplets"] else []
    net_cfg, loss_cfg, train_cfg = _train_components(cohort, resolved)
    params, log = fit(cohort, split, trips, net_cfg, loss_cfg, train_cfg)
    # the persisted echo holds the run-defining parameters only; input paths
    # would make otherwise-identical runs produce different bytes
    echo = {
        k: v for k, v in resolved.items()
        if k not in ("checkpoint", "log", "manifest", "triplets", "config")
    }
    echo["input_dim"] = net_cfg.input_dim
    save_checkpoint(resolved["checkpoint"], params, echo)
    log.write_csv(resolved["log"])


def _cmd_evaluate(args):
    resolved = _resolve(args, {
        "checkpoint": None, "manifest": None, "out": None,
        "test_fraction": 0.25, "trial": 0, "eval_subsets": 10, "seed": 0,
    })
    _echo("evaluate", resolved)
    params, ckpt_cfg = load_checkpoint(resolved["checkpoint"])
    cohort = load_cohort(resolved["manifest"])
    split = _split_for(cohort, resolved)
    set_size = int(ckpt_cfg.get("set_size", 200))
    report, scores = evaluate_split(
        params, cohort, split, set_size, resolved["eval_subsets"], resolved["seed"]
    )
    payload = report.as_dict()
    payload["scores"] = {k: scores[k] for k in sorted(scores)}
    out = Path(resolved["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _run_one_trial(cohort, covariate, binarize_rule, trial, resolved, rff_cfg):
    split = stratified_splits(
        cohort, trial + 1, resolved["test_fraction"], resolved["seed"]
    )[trial]
    train_cohort = _apply_binarize(
        cohort.restrict(split.train_ids), covariate, binarize_rule
    )
    net_cfg, loss_cfg, train_cfg = _train_components(cohort, resolved)
    if loss_cfg.alpha < 1.0:
        sigs = compute_signatures(train_cohort, rff_cfg)
        trip_cfg = TripletConfig(
            covariate=covariate,
            h_s=resolved["h_s"],
            h_d=resolved["h_d"],
            max_per_reference=resolved["max_per_reference"],
        )
        trips = select_triplets(train_cohort, sigs, trip_cfg)
    else:
        trips = []
    params, _ = fit(cohort, split, trips, net_cfg, loss_cfg, train_cfg)
    report, _ = evaluate_split(
        params, cohort, split, train_cfg.set_size,
        resolved["eval_subsets"], resolved["seed"],
    )
    return report


def _cmd_trials(args):
    resolved = _resolve(args, {
        "manifest": None, "covariate": None, "out": None, "n_trials": 30,
        "eval_subsets": 10, **_RFF_DEFAULTS, **_TRIPLET_DEFAULTS, **_TRAIN_DEFAULTS,
    })
    _echo("trials", resolved)
    cohort = load_cohort(resolved["manifest"])
    rff_cfg = _rff_config(resolved)
    reports = []
    for trial in range(resolved["n_trials"]):
        reports.append(
            _run_one_trial(
                cohort, resolved["covariate"], resolved["binarize"],
                trial, resolved, rff_cfg,
            )
        )
    rows = [
        [r.trial_id, _fmt(r.auc), _fmt(r.precision), _fmt(r.recall), _fmt(r.f1),
         r.n_test, ""]
        for r in reports
    ]
    aucs = np.array([r.auc for r in reports])
    ci = 1.96 * aucs.std(ddof=1) / np.sqrt(len(aucs)) if len(aucs) > 1 else 0.0
    rows.append([
        "mean",
        _fmt(aucs.mean()),
        _fmt(np.mean([r.precision for r in reports])),
        _fmt(np.mean([r.recall for r in reports])),
        _fmt(np.mean([r.f1 for r in reports])),
        reports[0].n_test,
        _fmt(ci),
    ])
    _write_csv(
        resolved["out"],
        ["trial_id", "auc", "precision", "recall", "f1", "n_test", "auc_ci95"],
        rows,
    )


def _cmd_covdep(args):
    resolved = _resolve(args, {
        "manifest": None, "out": None, "covariates": None, "binarize": "median",
    })
    _echo("covdep", resolved)
    cohort = load_cohort(resolved["manifest"])
    if resolved["covariates"]:
        names = _parse_grid(resolved["covariates"], str)
    else:
        names = sorted({n for _, rec in cohort.samples for n in rec.covariates})
    if not names:
        raise DataError("manifest has no covariate columns")
    entries = []
    for name in names:
        bin_cohort = _apply_binarize(cohort, name, resolved["binarize"])
        table, stat = covariate_dependency(bin_cohort, name)
        entries.append((name, table, stat, stat / table.total))
    entries.sort(key=lambda e: (e[2], e[0]))
    rows = [
        [name, t.d0, t.d1, t.d2, t.d3, _fmt(stat), _fmt(norm)]
        for name, t, stat, norm in entries
    ]
    _write_csv(
        resolved["out"],
        ["covariate", "d0", "d1", "d2", "d3", "dependency", "dependency_normalized"],
        rows,
    )


def _cmd_embed(args):
    resolved = _resolve(args, {"checkpoint": None, "manifest": None, "out": None})
    _echo("embed", resolved)
    params, _ = load_checkpoint(resolved["checkpoint"])
    cohort = load_cohort(resolved["manifest"])
    embeddings = embed_samples(params, cohort)
    dim = len(next(iter(embeddings.values())))
    rows = [
        [sid, *[_fmt(v) for v in embeddings[sid]]] for sid in sorted(embeddings)
    ]
    _write_csv(resolved["out"], ["sample_id", *[f"e{i}" for i in range(dim)]], rows)


def _cmd_project(args):
    resolved = _resolve(args, {"checkpoint": None, "manifest": None, "out": None})
    _echo("project", resolved)
    params, _ = load_checkpoint(resolved["checkpoint"])
    cohort = load_cohort(resolved["manifest"])
    embeddings = embed_samples(params, cohort)
    ids = sorted(embeddings)
    coords, explained = pca_project(np.array([embeddings[i] for i in ids]))
    print(
        f"explained variance: pc1={explained[0]!r} pc2={explained[1]!r}",
        file=sys.stderr,
    )
    rows = [
        [sid, _fmt(coords[k, 0]), _fmt(coords[k, 1]), cohort.record(sid).outcome]
        for k, sid in enumerate(ids)
    ]
    _write_csv(resolved["out"], ["sample_id", "pc1", "pc2", "label"], rows)


def _cmd_align(args):
    resolved = _resolve(args, {
        "checkpoint": None, "manifest": None, "covariate": None, "out": None,
        "delta": 0.0, "n_pairs": 190, "seed": 0,
    })
    _echo("align", resolved)
    params, _ = load_checkpoint(resolved["checkpoint"])
    cohort = load_cohort(resolved["manifest"])
    summary = embedding_alignment(
        params, cohort, resolved["covariate"], resolved["delta"],
        resolved["n_pairs"], resolved["seed"],
    )
    rows = [
        [a, b, group, _fmt(dist)] for a, b, group, dist in summary.pairs
    ]
    _write_csv(resolved["out"], ["id_a", "id_b", "group", "distance"], rows)


def _cmd_sweep(args):
    resolved = _resolve(args, {
        "manifest": None, "covariate": None, "out": None,
        "h_s_grid": "20,40,60,80", "h_d_grid": "20,40,60,80",
        "alpha_grid": "0.3,0.5,0.7", "trials": 10, "eval_subsets": 10,
        "binarize": None, **_RFF_DEFAULTS, **_TRAIN_DEFAULTS,
    })
    _echo("sweep", resolved)
    cohort = load_cohort(resolved["manifest"])
    net_cfg, loss_cfg, train_cfg = _train_components(cohort, resolved)
    cells = sweep(
        cohort,
        resolved["covariate"],
        _parse_grid(resolved["h_s_grid"], int),
        _parse_grid(resolved["h_d_grid"], int),
        _parse_grid(resolved["alpha_grid"], float),
        resolved["trials"],
        _rff_config(resolved),
        net_cfg,
        train_cfg,
        resolved["margin"],
        resolved["test_fraction"],
        resolved["eval_subsets"],
        binarize_rule=resolved["binarize"],
    )
    rows = [
        [c.h_s, c.h_d, _fmt(c.alpha), _fmt(c.mean_auc), _fmt(c.std_auc), c.argmax_count]
        for c in cells
    ]
    _write_csv(
        resolved["out"],
        ["h_s", "h_d", "alpha", "mean_auc", "std_auc", "argmax_count"],
        rows,
    )


_COMMANDS = {
    "synth": _cmd_synth,
    "featurize": _cmd_featurize,
    "triplets": _cmd_triplets,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "trials": _cmd_trials,
    "covdep": _cmd_covdep,
    "embed": _cmd_embed,
    "project": _cmd_project,
    "align": _cmd_align,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _COMMANDS[args.cmd](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
