"""Command-line entry points for the credit-stack toolchain.

Subcommands: synth, prep, features, train, stack, blend, eval,
importance, run.  Every subcommand accepts --seed (override the
relevant configured seed), --threads (worker cap; the current
implementation is single-threaded, and outputs never depend on the
value), and --quiet (errors only).

Exit codes: 0 success, 2 configuration error, 3 data error,
4 training error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .blend import optimize_weights, read_predictions, save_ensemble, write_predictions
from . import cv_stack, features as features_mod, gbdt, ingest
from . import pipeline as pipeline_mod, report as report_mod, synth as synth_mod
from .errors import ConfigError, CreditStackError, DataError, MissingLabelError
from .metric import composite_metric
from .serialize import write_json

log = logging.getLogger(__name__)


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="override the configured random seed")
    common.add_argument("--threads", type=int, default=1,
                        help="worker thread cap (results never depend on it)")
    common.add_argument("--quiet", action="store_true",
                        help="log errors only")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="credit-stack",
        description="Credit-default prediction pipeline: cleaning, features, "
                    "boosted trees, stacking, blending, and reports.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a seeded synthetic statement dataset")
    p.add_argument("--config", required=True, help="synth config JSON")
    p.add_argument("--out-data", required=True, help="statement CSV to write")
    p.add_argument("--out-labels", required=True, help="label CSV to write")
    p.add_argument("--out-schema", default=None, help="also write the column schema JSON")

    p = sub.add_parser("prep", parents=[common],
                       help="parse, compact, denoise, and mask a raw statement CSV")
    p.add_argument("--input", required=True, help="raw statement CSV")
    p.add_argument("--schema", required=True, help="column schema JSON")
    p.add_argument("--precision", type=float, default=0.01,
                   help="rounding step for continuous values (default 0.01)")
    p.add_argument("--out", required=True,
                   help="cleaned CSV path; a .schema.json sidecar is written next to it")

    p = sub.add_parser("features", parents=[common],
                       help="aggregate a cleaned CSV into a per-customer feature matrix")
    p.add_argument("--input", required=True,
                   help="cleaned CSV (its <input>.schema.json sidecar must exist)")
    p.add_argument("--spec", required=True, help="aggregation spec JSON")
    p.add_argument("--window", type=int, default=None,
                   help="override: keep only the last N statements per customer")
    p.add_argument("--encode", choices=features_mod.ENCODINGS, default=None,
                   help="override the categorical encoding mode")
    p.add_argument("--vocab", default=None,
                   help="one-hot vocabulary JSON: read when present, written after fitting")
    p.add_argument("--out", required=True, help="feature matrix container to write")

    p = sub.add_parser("train", parents=[common],
                       help="train one boosted model on a feature matrix")
    p.add_argument("--features", required=True, help="feature matrix container")
    p.add_argument("--labels", required=True, help="label CSV (customer_id, target)")
    p.add_argument("--config", required=True, help="train config JSON")
    p.add_argument("--model-out", required=True, help="model JSON to write")

    p = sub.add_parser("stack", parents=[common],
                       help="out-of-fold base training plus a stacked meta model")
    p.add_argument("--features", required=True, help="feature matrix container")
    p.add_argument("--labels", required=True, help="label CSV")
    p.add_argument("--folds", type=int, default=5, help="fold count (default 5)")
    p.add_argument("--base-config", required=True, help="base learner config JSON")
    p.add_argument("--meta-config", required=True, help="meta learner config JSON")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("blend", parents=[common],
                       help="search convex blend weights over member prediction CSVs")
    p.add_argument("--pred", action="append", required=True, metavar="CSV",
                   help="member prediction CSV; repeat per member")
    p.add_argument("--labels", required=True, help="label CSV")
    p.add_argument("--step", type=float, default=0.01, help="weight grid step")
    p.add_argument("--out", required=True, help="ensemble spec JSON to write")

    p = sub.add_parser("eval", parents=[common],
                       help="score predictions against labels")
    p.add_argument("--labels", required=True, help="label CSV")
    p.add_argument("--pred", required=True, help="prediction CSV")
    p.add_argument("--report", required=True, help="metric report JSON to write")

    p = sub.add_parser("importance", parents=[common],
                       help="aggregate fold models into an importance report and box plot")
    p.add_argument("--model", action="append", required=True, metavar="JSON",
                   help="fold model JSON; repeat per fold")
    p.add_argument("--kind", choices=("average_gain", "total_gain"),
                   default="average_gain")
    p.add_argument("--top-n", type=int, default=20, help="features in the box plot")
    p.add_argument("--out-json", required=True, help="report JSON to write")
    p.add_argument("--out-svg", required=True, help="box plot SVG to write")

    p = sub.add_parser("run", parents=[common],
                       help="execute the full pipeline from one config file")
    p.add_argument("--config", required=True, help="pipeline config JSON")

    return parser


# ---------------------------------------------------------------------------
# subcommand bodies


def _cmd_synth(args) -> int:
    config = synth_mod.config_from_json(args.config)
    if args.seed is not None:
        config = synth_mod.SynthConfig(
            **{**config.__dict__, "seed": args.seed}
        )
    table, labels = synth_mod.generate(config)
    ingest.write_csv(table, args.out_data)
    ingest.write_labels(labels, args.out_labels)
    if args.out_schema:
        write_json(args.out_schema, ingest.schema_to_json(synth_mod.synth_schema(config)))
    log.info("wrote %d statement rows for %d customers", table.n_rows,
             table.customers().size)
    return 0


def _cmd_prep(args) -> int:
    schema = ingest.load_schema(args.schema)
    table = ingest.parse_csv(args.input, schema)
    # rounding first: ties need the parsed precision, not float32 storage
    table = ingest.denoise_round(table, args.precision)
    table = ingest.compact_types(table, schema)
    table, masked = ingest.mask_outliers(table, table.schema)
    for column, count in masked.items():
        if count:
            log.info("masked %d outlier cells in %s", count, column)
    ingest.write_csv(table, args.out)
    write_json(str(args.out) + ".schema.json", ingest.schema_to_json(table.schema))
    log.info("cleaned %d rows into %s", table.n_rows, args.out)
    return 0


def _cmd_features(args) -> int:
    sidecar = str(args.input) + ".schema.json"
    if not Path(sidecar).exists():
        raise DataError(f"schema sidecar {sidecar} not found; run prep first")
    schema = ingest.load_schema(sidecar)
    table = ingest.parse_csv(args.input, schema)
    spec = features_mod.spec_from_json(args.spec)
    overrides = {}
    if args.window is not None:
        overrides["recent_window"] = args.window
    if args.encode is not None:
        overrides["encode"] = args.encode
    if overrides:
        spec = features_mod.AggregationSpec(**{**spec.__dict__, **overrides})

    vocab = None
    fit = True
    if args.vocab and Path(args.vocab).exists():
        vocab = json.loads(Path(args.vocab).read_text(encoding="utf-8"))
        fit = False
    matrix, _, vocab = features_mod.build_matrix(table, spec, vocab=vocab, fit_vocab=fit)
    if args.vocab and fit and vocab is not None:
        write_json(args.vocab, vocab)
    features_mod.save_matrix(matrix, args.out)
    log.info("built %dx%d matrix into %s", matrix.n_rows, matrix.n_cols, args.out)
    return 0


def _aligned_labels(matrix, labels_path) -> np.ndarray:
    labels = ingest.read_labels(labels_path)
    out = np.empty(matrix.n_rows, dtype=np.int8)
    for i, cid in enumerate(matrix.customer_ids):
        if cid not in labels:
            raise MissingLabelError(f"no label for customer {cid!r}")
        out[i] = labels[cid]
    return out


def _cmd_train(args) -> int:
    matrix = features_mod.load_matrix(args.features)
    y = _aligned_labels(matrix, args.labels)
    config = gbdt.config_from_json(args.config)
    if args.seed is not None:
        config = gbdt.TrainConfig(**{**config.__dict__, "seed": args.seed})
    model = gbdt.train(matrix, y, config)
    gbdt.save_model(model, args.model_out)
    log.info("trained %d trees into %s", model.n_trees, args.model_out)
    return 0


def _cmd_stack(args) -> int:
    matrix = features_mod.load_matrix(args.features)
    y = _aligned_labels(matrix, args.labels)
    base_cfg = gbdt.config_from_json(args.base_config)
    meta_cfg = gbdt.config_from_json(args.meta_config)
    seed = args.seed if args.seed is not None else base_cfg.seed
    plan = cv_stack.make_folds(y, args.folds, seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cv_stack.save_plan(plan, out / "folds.csv")

    result = cv_stack.train_oof(matrix, y, plan, base_cfg)
    for f, model in enumerate(result.models):
        gbdt.save_model(model, out / f"base_fold_{f}.model.json")
    write_predictions(matrix.customer_ids, result.oof.prediction,
                                out / "oof.csv")

    augmented = cv_stack.append_meta(matrix, [result.oof])
    meta_model = cv_stack.train_meta(augmented, y, plan, meta_cfg)
    gbdt.save_model(meta_model, out / "meta.model.json")
    log.info("stacked into %s (base OOF M on train rows is in oof.csv)", out)
    return 0


def _cmd_blend(args) -> int:
    if len(args.pred) < 2:
        raise ConfigError("blend needs --pred at least twice")
    first_ids, first = read_predictions(args.pred[0])
    vectors = [first]
    for path in args.pred[1:]:
        ids, vec = read_predictions(path)
        if ids != first_ids:
            lookup = dict(zip(ids, vec))
            missing = [cid for cid in first_ids if cid not in lookup]
            if missing:
                raise DataError(
                    f"{path}: missing predictions for {len(missing)} customers "
                    f"(first: {missing[0]!r})"
                )
            vec = np.array([lookup[cid] for cid in first_ids])
        vectors.append(vec)
    label_map = ingest.read_labels(args.labels)
    try:
        y = np.array([label_map[cid] for cid in first_ids], dtype=np.int8)
    except KeyError as exc:
        raise MissingLabelError(f"no label for customer {exc.args[0]!r}") from None

    names = [Path(p).stem for p in args.pred]
    if len(set(names)) != len(names):
        names = [f"member_{i}_{n}" for i, n in enumerate(names)]
    spec, best_m = optimize_weights(vectors, y, args.step, member_names=names)
    save_ensemble(spec, args.out)
    log.info("best blend M = %.6f -> %s", best_m, args.out)
    return 0


def _cmd_eval(args) -> int:
    ids, preds = read_predictions(args.pred)
    label_map = ingest.read_labels(args.labels)
    try:
        y = np.array([label_map[cid] for cid in ids], dtype=np.int8)
    except KeyError as exc:
        raise MissingLabelError(f"no label for customer {exc.args[0]!r}") from None
    rep = composite_metric(y, preds)
    write_json(args.report, rep.as_dict())
    log.info("M = %.6f (G %.6f, D %.6f) over %d rows", rep.M, rep.G, rep.D, rep.n_rows)
    return 0


def _cmd_importance(args) -> int:
    models = [gbdt.load_model(path) for path in args.model]
    rep = report_mod.build_importance_report(models, args.kind)
    report_mod.save_report(rep, args.out_json)
    report_mod.save_box_plot(rep, args.out_svg, args.top_n)
    log.info("importance over %d folds -> %s, %s", len(models), args.out_json,
             args.out_svg)
    return 0


def _cmd_run(args) -> int:
    config = pipeline_mod.config_from_json(args.config)
    if args.seed is not None:
        config = pipeline_mod.PipelineConfig(
            **{**{f: getattr(config, f) for f in config.__dataclass_fields__},
               "seed": args.seed}
        )
    out = pipeline_mod.run_pipeline(config)
    log.info("run complete: %s", out)
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "prep": _cmd_prep,
    "features": _cmd_features,
    "train": _cmd_train,
    "stack": _cmd_stack,
    "blend": _cmd_blend,
    "eval": _cmd_eval,
    "importance": _cmd_importance,
    "run": _cmd_run,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.ERROR if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](args)
    except CreditStackError as exc:
        stage = getattr(exc, "stage", None)
        where = f" [stage {stage}]" if stage else ""
        print(f"error{where}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
