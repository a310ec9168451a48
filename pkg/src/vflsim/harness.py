"""Config-driven pipelines: data -> split -> train -> evaluate -> attack -> records."""

from __future__ import annotations

import copy
import csv
import itertools
import json
import statistics
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import attacks, data, defenses, protocol
from .config import (
    ExperimentConfig,
    config_from_dict,
    config_to_dict,
    defense_label,
    load_yaml,
    make_defense,
)
from .errors import ConfigError, StageError, VflError

# sub-seed offsets from the master seed, one per pipeline component
DATA_SEED, SPLIT_SEED, INIT_SEED, SHUFFLE_SEED, DEFENSE_SEED, TEACHER_SEED, ATTACK_SEED, LABEL_SEED = range(8)

CSV_COLUMNS = [
    "name",
    "point",
    "defense",
    "metric",
    "n_seeds",
    "task_metric_mean",
    "task_metric_std",
    "attack",
    "attack_success_mean",
    "attack_success_std",
    "epoch_seconds_mean",
]

TIMING_KEYS = ("epoch_seconds", "active_epoch_seconds", "epoch_seconds_mean", "active_epoch_seconds_mean")


@dataclass
class ResultRecord:
    name: str
    config: dict
    per_seed: list[dict]
    aggregate: dict = field(default_factory=dict)
    point: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.aggregate:
            self.aggregate = aggregate(self.per_seed)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "point": self.point,
            "config": self.config,
            "per_seed": self.per_seed,
            "aggregate": self.aggregate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResultRecord":
        return cls(d["name"], d["config"], d["per_seed"], d["aggregate"], d.get("point", {}))

    def attack_kinds(self) -> list[str]:
        kinds: set[str] = set()
        for s in self.per_seed:
            kinds.update(s["attack_success"])
        return sorted(kinds)

    def mean(self, key: str) -> float:
        return self.aggregate[f"{key}_mean"]


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    values = [float(v) for v in values]
    return statistics.fmean(values), statistics.pstdev(values) if len(values) > 1 else 0.0


def aggregate(per_seed: list[dict]) -> dict:
    if not per_seed:
        return {}
    out: dict[str, Any] = {"n_seeds": len(per_seed)}
    out["task_metric_mean"], out["task_metric_std"] = _mean_std([s["task_metric"] for s in per_seed])
    kinds = sorted({k for s in per_seed for k in s["attack_success"]})
    for kind in kinds:
        m, sd = _mean_std([s["attack_success"][kind] for s in per_seed])
        out[f"attack_{kind}_mean"], out[f"attack_{kind}_std"] = m, sd
    out["epoch_seconds_mean"] = statistics.fmean(
        [t for s in per_seed for t in s["epoch_seconds"]] or [0.0])
    return out


# ---------------------------------------------------------------------------
# single experiment


@dataclass
class SeedContext:
    """Everything one seed's pipeline built; handy for tests and embedding dumps."""

    seed: int
    train: data.Dataset
    test: data.Dataset
    columns: list[list[int]]
    session: protocol.VflSession
    soft_targets: np.ndarray | None = None


@contextmanager
def _stage(name: str, seed: int | None):
    try:
        yield
    except StageError:
        raise
    except (VflError, ValueError, OSError, ArithmeticError) as exc:
        raise StageError(name, seed, exc) from exc


def load_dataset(cfg: ExperimentConfig, seed: int) -> data.Dataset:
    ds_cfg = cfg.dataset
    if ds_cfg.kind == "csv":
        ds = data.load_csv(ds_cfg.path, ds_cfg.label_column, ds_cfg.has_header)
    else:
        ds = data.gen_gaussian_blobs(data.SyntheticSpec(
            ds_cfg.n, ds_cfg.d, ds_cfg.num_classes, ds_cfg.cluster_separation,
            ds_cfg.noise_std, seed + DATA_SEED))
    if ds_cfg.shuffle_labels:
        rng = np.random.default_rng(seed + LABEL_SEED)
        ds = data.Dataset(ds.X, ds.y[rng.permutation(ds.n)], ds.num_classes,
                          ds.feature_names, ds.class_names)
    return ds


def prepare(cfg: ExperimentConfig, seed: int, *, alpha: float = 1.0) -> SeedContext:
    """Build data, split and an untrained session for one seed."""
    with _stage("data", seed):
        ds = load_dataset(cfg, seed)
        if cfg.split.assignment == "explicit":
            columns = data.vertical_split(ds.d, len(cfg.split.columns), cfg.split.columns)
        else:
            columns = data.vertical_split(ds.d, cfg.split.parties)
    with _stage("split", seed):
        train, test = data.train_test_split(ds, cfg.dataset.test_fraction, seed + SPLIT_SEED)
        if cfg.dataset.normalize:
            stats = data.fit_normalizer(train)
            train, test = data.normalize(train, stats), data.normalize(test, stats)

    defense = make_defense(cfg)
    soft = None
    if defense.ladistill is not None:
        with _stage("teacher", seed):
            lad = defense.ladistill
            scope = train.X[:, columns[cfg.owner_party]] if lad.teacher_feature_scope == "owner_slice" else train.X
            teacher = defenses.train_teacher(lad, scope, train.y, train.num_classes,
                                             np.random.default_rng(seed + TEACHER_SEED))
            soft = defenses.lad_anonymize_matrix(defenses.teacher_soft_labels(teacher, scope), lad.k, lad.epsilon)

    with _stage("build", seed):
        session = protocol.build_session(
            train.X, train.y, train.num_classes, columns,
            embed_width=cfg.model.embed_width,
            bottom_hidden=cfg.model.bottom_hidden,
            top_hidden=cfg.model.top_hidden,
            head=cfg.model.head,
            sgd=copy.deepcopy(cfg.sgd),
            defense=defense,
            adversary=cfg.adversary,
            alpha=alpha,
            soft_targets=soft,
            metric=cfg.metric,
            init_seed=seed + INIT_SEED,
            shuffle_seed=seed + SHUFFLE_SEED,
            defense_seed=seed + DEFENSE_SEED,
        )
    return SeedContext(seed, train, test, columns, session, soft)


def run_seed(cfg: ExperimentConfig, seed: int) -> tuple[dict, SeedContext]:
    ctx = prepare(cfg, seed)
    session = ctx.session
    result: dict[str, Any] = {"seed": seed, "attack_success": {}}

    active_session = None
    if cfg.attacks.active is not None:
        active_session = attacks.run_active_session(session, cfg.attacks.active.alpha)
        active_session.defense = session.defense.fresh()

    direct = None
    if cfg.attacks.direct is not None:
        with _stage("attack", seed):
            direct = attacks.DirectAttack(session, cfg.attacks.direct).attach(session)

    with _stage("train", seed):
        protocol.train(session)
    with _stage("evaluate", seed):
        result["task_metric"] = protocol.evaluate(session, ctx.test.X, ctx.test.y, cfg.metric)
    result["epoch_seconds"] = [r.seconds for r in session.epoch_log]

    with _stage("attack", seed):
        if cfg.attacks.passive is not None:
            rep = attacks.passive_attack(session, ctx.test.X, ctx.test.y, cfg.attacks.passive,
                                         seed + ATTACK_SEED, cfg.metric)
            result["attack_success"]["passive"] = rep.success_rate
        if direct is not None:
            result["attack_success"]["direct"] = direct.report(session.owner.labels).success_rate
    if active_session is not None:
        with _stage("train", seed):
            protocol.train(active_session)
        with _stage("attack", seed):
            rep = attacks.passive_attack(active_session, ctx.test.X, ctx.test.y, cfg.attacks.active.passive,
                                         seed + ATTACK_SEED, cfg.metric)
            result["attack_success"]["active"] = rep.success_rate
            flags = [f[active_session.adversary.index] for f in active_session.flag_log]
            result["active_adversary_flag_rate"] = float(np.mean(flags)) if flags else 0.0
            result["active_task_metric"] = protocol.evaluate(active_session, ctx.test.X, ctx.test.y, cfg.metric)
            result["active_epoch_seconds"] = [r.seconds for r in active_session.epoch_log]
    return result, ctx


def run_experiment(cfg: ExperimentConfig, point: dict | None = None) -> ResultRecord:
    per_seed = [run_seed(cfg, seed)[0] for seed in cfg.seeds]
    return ResultRecord(cfg.name, config_to_dict(cfg), per_seed, point=dict(point or {}))


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepSpec:
    base: dict
    parameters: list[tuple[str, list]]
    mode: str = "product"

    def validate(self) -> None:
        if not 1 <= len(self.parameters) <= 2:
            raise ConfigError(f"a sweep takes one or two parameter paths, got {len(self.parameters)}")
        if self.mode not in ("product", "zip"):
            raise ConfigError(f"sweep mode must be product or zip, got {self.mode!r}")
        for path, values in self.parameters:
            if not values:
                raise ConfigError(f"sweep parameter {path!r} has an empty value list")
        if self.mode == "zip" and len({len(v) for _, v in self.parameters}) != 1:
            raise ConfigError("zip sweeps need value lists of equal length")
        base_cfg = config_from_dict(self.base)
        tree = config_to_dict(base_cfg)
        for path, _ in self.parameters:
            _set_path(copy.deepcopy(tree), path, None)

    def points(self) -> list[dict]:
        paths = [p for p, _ in self.parameters]
        lists = [v for _, v in self.parameters]
        combos = zip(*lists) if self.mode == "zip" else itertools.product(*lists)
        return [dict(zip(paths, combo)) for combo in combos]


def _set_path(tree: dict, path: str, value) -> None:
    keys = path.split(".")
    node = tree
    for i, key in enumerate(keys[:-1]):
        if not isinstance(node, dict) or key not in node or node[key] is None:
            raise ConfigError(f"sweep path {path!r}: {'.'.join(keys[:i + 1])} is not a config section here")
        node = node[key]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigError(f"sweep path {path!r} does not exist in the config schema")
    node[keys[-1]] = value


def sweep_from_dict(raw: dict) -> SweepSpec:
    raw = copy.deepcopy(raw)
    sweep = raw.pop("sweep", None)
    if not sweep:
        raise ConfigError("config has no sweep section")
    if not isinstance(sweep, dict):
        raise ConfigError("sweep must be a mapping")
    unknown = set(sweep) - {"mode", "parameters"}
    if unknown:
        raise ConfigError(f"sweep: unknown key(s) {sorted(unknown)}")
    params = []
    for entry in sweep.get("parameters") or []:
        if not isinstance(entry, dict) or set(entry) != {"path", "values"}:
            raise ConfigError("each sweep parameter needs exactly 'path' and 'values'")
        params.append((str(entry["path"]), list(entry["values"] or [])))
    spec = SweepSpec(raw, params, sweep.get("mode", "product"))
    spec.validate()
    return spec


def run_sweep(sweep: SweepSpec) -> list[ResultRecord]:
    sweep.validate()
    base_tree = config_to_dict(config_from_dict(sweep.base))
    records = []
    for point in sweep.points():
        tree = copy.deepcopy(base_tree)
        for path, value in point.items():
            _set_path(tree, path, value)
        cfg = config_from_dict(tree)
        records.append(run_experiment(cfg, point))
    return records


def tradeoff_table(records: Sequence[ResultRecord], attack: str | None = None) -> list[dict]:
    rows = []
    for rec in records:
        kinds = rec.attack_kinds()
        kind = attack or (kinds[0] if kinds else None)
        rows.append({
            "point": format_point(rec.point),
            "task_metric": rec.aggregate["task_metric_mean"],
            "attack": kind or "",
            "attack_success": rec.aggregate.get(f"attack_{kind}_mean", float("nan")) if kind else float("nan"),
        })
    return rows


def format_point(point: dict) -> str:
    return ";".join(f"{k}={v}" for k, v in point.items())


# ---------------------------------------------------------------------------
# output


def emit_results(records: Sequence[ResultRecord], fmt: str, path) -> None:
    if fmt not in ("json_lines", "csv"):
        raise ConfigError(f"format must be json_lines or csv, got {fmt!r}")
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if fmt == "json_lines":
            for rec in records:
                fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
            return
        if not records:
            return
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in csv_rows(records):
            writer.writerow([row[c] for c in CSV_COLUMNS])


def csv_rows(records: Sequence[ResultRecord]) -> list[dict]:
    rows = []
    for rec in records:
        agg = rec.aggregate
        cfg = config_from_dict(rec.config)
        base = {
            "name": rec.name,
            "point": format_point(rec.point),
            "defense": defense_label(cfg),
            "metric": cfg.metric,
            "n_seeds": agg["n_seeds"],
            "task_metric_mean": repr(agg["task_metric_mean"]),
            "task_metric_std": repr(agg["task_metric_std"]),
            "epoch_seconds_mean": repr(agg["epoch_seconds_mean"]),
        }
        kinds = rec.attack_kinds() or [""]
        for kind in kinds:
            row = dict(base, attack=kind)
            row["attack_success_mean"] = repr(agg[f"attack_{kind}_mean"]) if kind else ""
            row["attack_success_std"] = repr(agg[f"attack_{kind}_std"]) if kind else ""
            rows.append(row)
    return rows


def read_json_lines(path) -> list[ResultRecord]:
    with Path(path).open(encoding="utf-8") as fh:
        return [ResultRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def strip_timing(obj):
    """Copy of a record dict without wall-clock fields (for determinism checks)."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def dump_embeddings(session: protocol.VflSession, X, y, path) -> None:
    """Write the adversary's embeddings of ``X`` plus the true label, one row per sample."""
    adv = session.adversary
    emb = adv.embed_external(np.asarray(X, dtype=np.float64)[:, adv.columns])
    y = np.asarray(y)
    if len(y) != emb.shape[0]:
        raise ConfigError(f"{emb.shape[0]} rows but {len(y)} labels")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"e{j}" for j in range(emb.shape[1])] + ["label"])
        for row, label in zip(emb, y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_experiment(path) -> ExperimentConfig:
    return config_from_dict(load_yaml(path))
