"""End-to-end run orchestration from a single JSON configuration.

A run cleans the raw statements, splits customers into a training part
and a blend-validation holdout, engineers one matrix per configured
member, trains every member out-of-fold on a shared fold plan, appends
base members' OOF columns to the members that stack on them, searches
blend weights on the holdout, and writes every artifact plus a
manifest of content digests.  Rerunning the same configuration and
seed reproduces every file byte for byte.

Run directory layout::

    clean/clean.csv + clean/clean.schema.json
    split.csv                  customer_id,split (train/holdout)
    folds.csv                  row_index,fold over the training rows
    members/<name>/            matrix.bin, matrix_holdout.bin, vocab.json?,
                               fold_<i>.model.json, oof.csv, holdout_pred.csv,
                               metrics.json, importance.json, importance.svg
    ensemble/                  weights.json, prediction.csv, metrics.json
    manifest.json              relative path -> sha256
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cv_stack, features as features_mod, gbdt, ingest, report as report_mod
from .blend import EnsembleSpec, blend, optimize_weights, save_ensemble, write_predictions
from .errors import ConfigError, CreditStackError
from .metric import composite_metric
from .serialize import format_float, sha256_file, write_json

log = logging.getLogger(__name__)

_NAME_RE = re.compile(r"^[A-Za-z0-9_-]+$")


@dataclass(frozen=True)
class MemberConfig:
    """One ensemble member: its feature recipe, learner, and inputs."""

    name: str
    features: features_mod.AggregationSpec
    train: gbdt.TrainConfig
    meta_from: tuple = ()


@dataclass(frozen=True)
class PipelineConfig:
    data: str
    labels: str
    schema: str
    out_dir: str
    members: tuple
    precision: float = 0.01
    folds: int = 5
    seed: int = 42
    holdout_fraction: float = 0.2
    blend_step: float = 0.01
    report_top_n: int = 20
    importance_kind: str = "average_gain"

    def __post_init__(self):
        if not self.members:
            raise ConfigError("pipeline needs at least one member")
        names = [m.name for m in self.members]
        if len(set(names)) != len(names):
            raise ConfigError(f"member names must be unique: {names}")
        seen: set = set()
        for member in self.members:
            if not _NAME_RE.match(member.name):
                raise ConfigError(
                    f"member name {member.name!r} must match {_NAME_RE.pattern}"
                )
            for ref in member.meta_from:
                if ref not in seen:
                    raise ConfigError(
                        f"member {member.name!r} stacks on {ref!r}, which is not "
                        "an earlier member"
                    )
            seen.add(member.name)
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError(
                f"holdout_fraction must lie in (0, 1), got {self.holdout_fraction}"
            )
        if self.importance_kind not in ("average_gain", "total_gain"):
            raise ConfigError(f"unknown importance_kind {self.importance_kind!r}")


def config_from_json(source) -> PipelineConfig:
    """Load and validate a pipeline configuration document."""
    if isinstance(source, (str, Path)):
        try:
            doc = json.loads(Path(source).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read pipeline config {source}: {exc}") from exc
    else:
        doc = source
    if not isinstance(doc, dict):
        raise ConfigError("pipeline config must be a JSON object")
    allowed = set(PipelineConfig.__dataclass_fields__)
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown pipeline config keys: {sorted(unknown)}")
    for key in ("data", "labels", "schema", "out_dir", "members"):
        if key not in doc:
            raise ConfigError(f"pipeline config is missing {key!r}")
    members = []
    for i, raw in enumerate(doc["members"]):
        if not isinstance(raw, dict) or "name" not in raw:
            raise ConfigError(f"member {i} must be an object with a 'name'")
        extra = set(raw) - {"name", "features", "train", "meta_from"}
        if extra:
            raise ConfigError(f"member {raw['name']!r}: unknown keys {sorted(extra)}")
        members.append(
            MemberConfig(
                name=raw["name"],
                features=features_mod.spec_from_json(raw.get("features", {})),
                train=gbdt.config_from_json(raw.get("train", {})),
                meta_from=tuple(raw.get("meta_from", ())),
            )
        )
    kwargs = {k: v for k, v in doc.items() if k != "members"}
    return PipelineConfig(members=tuple(members), **kwargs)


# ---------------------------------------------------------------------------
# helpers


def _stage(name: str):
    """Decorator-free stage guard: tag escaping errors with the stage."""

    class _Guard:
        def __enter__(self):
            log.info("stage %s", name)
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and isinstance(exc, CreditStackError):
                if not getattr(exc, "stage", None):
                    exc.stage = name
            return False

    return _Guard()


def _subset_rows(table: ingest.StatementTable, keep_customers: np.ndarray):
    starts = table.row_starts()
    counts = np.diff(np.concatenate((starts, [table.n_rows])))
    mask = np.repeat(keep_customers, counts)
    return ingest.StatementTable(
        table.schema,
        table.customer_ids[mask],
        table.statement_index[mask],
        {name: arr[mask] for name, arr in table.columns.items()},
    )


def _holdout_split(labels: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """Boolean holdout mask, stratified per class, seeded."""
    rng = np.random.default_rng(seed)
    mask = np.zeros(labels.size, dtype=bool)
    for klass in (1, 0):
        idx = np.flatnonzero(labels == klass)
        n_hold = int(np.floor(fraction * idx.size))
        chosen = rng.permutation(idx)[:n_hold]
        mask[chosen] = True
    return mask


def _write_split(path, customers: np.ndarray, holdout: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["customer_id", "split"])
        for cid, is_hold in zip(customers, holdout):
            writer.writerow([cid, "holdout" if is_hold else "train"])


def _metric_json(path, labels, preds) -> float:
    rep = composite_metric(labels, preds)
    write_json(path, rep.as_dict())
    return rep.M


# ---------------------------------------------------------------------------
# the run


def run_pipeline(config: PipelineConfig) -> Path:
    """Execute every stage and return the populated run directory."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with _stage("prep"):
        schema = ingest.load_schema(config.schema)
        table = ingest.parse_csv(config.data, schema)
        # denoise before narrowing storage: rounding ties need the full
        # parsed precision (float32 can sit a hair below the tie point)
        table = ingest.denoise_round(table, config.precision)
        table = ingest.compact_types(table, schema)
        table, masked = ingest.mask_outliers(table, table.schema)
        if masked:
            log.info("masked outlier cells: %s", masked)
        labeled = ingest.join_labels(table, ingest.read_labels(config.labels))
        clean_dir = out / "clean"
        clean_dir.mkdir(exist_ok=True)
        ingest.write_csv(table, clean_dir / "clean.csv")
        write_json(clean_dir / "clean.schema.json", ingest.schema_to_json(table.schema))

    with _stage("split"):
        customers = table.customers()
        holdout_mask = _holdout_split(
            labeled.target, config.holdout_fraction, config.seed
        )
        _write_split(out / "split.csv", customers, holdout_mask)
        train_table = _subset_rows(table, ~holdout_mask)
        hold_table = _subset_rows(table, holdout_mask)
        y_train = labeled.target[~holdout_mask]
        y_hold = labeled.target[holdout_mask]
        train_labeled = ingest.LabeledTable(train_table, y_train)
        hold_labeled = ingest.LabeledTable(hold_table, y_hold)

    with _stage("folds"):
        plan = cv_stack.make_folds(y_train, config.folds, config.seed + 1)
        cv_stack.save_plan(plan, out / "folds.csv")

    member_holdout_preds: dict = {}
    member_oof: dict = {}
    member_metrics: dict = {}
    for member in config.members:
        with _stage(f"member:{member.name}"):
            mdir = out / "members" / member.name
            mdir.mkdir(parents=True, exist_ok=True)

            matrix, _, vocab = features_mod.build_matrix(train_labeled, member.features)
            hold_matrix, _, _ = features_mod.build_matrix(
                hold_labeled, member.features, vocab=vocab,
                fit_vocab=member.features.encode != "one-hot",
            )
            if vocab is not None:
                write_json(mdir / "vocab.json", vocab)

            if member.meta_from:
                matrix = cv_stack.append_meta(
                    matrix, [member_oof[ref] for ref in member.meta_from]
                )
                hold_matrix = cv_stack.append_meta(
                    hold_matrix, [member_holdout_preds[ref] for ref in member.meta_from]
                )
            features_mod.save_matrix(matrix, mdir / "matrix.bin")
            features_mod.save_matrix(hold_matrix, mdir / "matrix_holdout.bin")

            result = cv_stack.train_oof(matrix, y_train, plan, member.train)
            for f, model in enumerate(result.models):
                gbdt.save_model(model, mdir / f"fold_{f}.model.json")
            _write_oof_csv(mdir / "oof.csv", matrix.customer_ids, result.oof)

            hold_pred = cv_stack.predict_with_fold_models(result.models, hold_matrix)
            write_predictions(
                hold_matrix.customer_ids, hold_pred, mdir / "holdout_pred.csv"
            )
            member_metrics[member.name] = _metric_json(
                mdir / "metrics.json", y_hold, hold_pred
            )

            imp = report_mod.build_importance_report(
                result.models, config.importance_kind, matrix.column_names
            )
            report_mod.save_report(imp, mdir / "importance.json")
            report_mod.save_box_plot(imp, mdir / "importance.svg", config.report_top_n)

            member_oof[member.name] = result.oof.prediction
            member_holdout_preds[member.name] = hold_pred
            log.info("member %s holdout M = %.6f", member.name, member_metrics[member.name])

    with _stage("blend"):
        edir = out / "ensemble"
        edir.mkdir(exist_ok=True)
        names = [m.name for m in config.members]
        preds = [member_holdout_preds[name] for name in names]
        if len(preds) >= 2:
            spec, _ = optimize_weights(
                preds, y_hold, config.blend_step, member_names=names
            )
        else:
            spec = EnsembleSpec(tuple(names), (1.0,))
        save_ensemble(spec, edir / "weights.json")
        final = blend(preds, spec.weights)
        write_predictions(
            hold_table.customers(), final, edir / "prediction.csv"
        )
        ensemble_m = _metric_json(edir / "metrics.json", y_hold, final)
        log.info("ensemble holdout M = %.6f (weights %s)", ensemble_m, spec.weights)

    with _stage("manifest"):
        digests = {}
        for path in sorted(out.rglob("*")):
            if path.is_file() and path.name != "manifest.json":
                digests[path.relative_to(out).as_posix()] = sha256_file(path)
        write_json(out / "manifest.json", {"files": digests})

    return out


def _write_oof_csv(path, customer_ids, oof: cv_stack.OofVector) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["customer_id", "fold", "probability"])
        for cid, f, p in zip(customer_ids, oof.fold, oof.prediction):
            writer.writerow([cid, int(f), format_float(float(p))])
