"""Run orchestration: JSON configuration, staged execution with a
content-addressed manifest, the feature-ablation driver, and figures.

Stages talk to each other only through files in the run directory, so any
stage can be re-executed alone and unchanged stages are skipped on rerun.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import platform
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__, svg
from .baselines import load_model
from .boost import BoostedEnsemble, gain_importance
from .cohort import Cohort, SynthesisSpec, load_csv, load_schema, synthesize, write_csv, write_schema
from .errors import ConfigError, DataError, HFMortError, NotApplicableError
from .eval import (
    FAMILIES,
    MODEL_ORDER,
    REPORT_COLUMNS,
    auc,
    bootstrap_auc_distribution,
    comparison_report,
    derived_seed,
    expand_grid,
    format_table,
    grid_search,
    report_rows,
    roc_curve,
)
from .explain import direction_check, shap_summary, tree_shap
from .preprocess import PreprocessConfig, prepare
from .stats import t_test_table, vif_filter

BASELINE_LABEL = "baseline"

# --------------------------------------------------------------------- config


def default_config_dict() -> dict:
    text = resources.files("hfmort.data").joinpath("default_config.json").read_text(encoding="utf-8")
    return json.loads(text)


_SECTIONS = {
    "preprocess": {"outlier_z": 4.0, "oversample_to_balance": True},
    "eval": {"folds": 5, "n_resamples": 1000, "alpha": 0.05, "threshold": 0.5},
    "shap": {"top_k": 15},
    "ablation": {"candidate_sets": [[]], "all_families": False},
}


@dataclass
class RunConfig:
    schema: str | None = None  # None -> bundled schema
    data: dict = field(default_factory=dict)  # {"synthesis": {...}} or {"csv": path}
    preprocess: dict = field(default_factory=dict)
    test_fraction: float = 0.2
    vif_threshold: float | None = 5.0  # None disables the filter
    exclude: list = field(default_factory=list)
    models: dict = field(default_factory=dict)  # family -> grid (None = default grid)
    eval: dict = field(default_factory=dict)
    shap: dict = field(default_factory=dict)
    ablation: dict = field(default_factory=dict)
    out: str = "runs/default"
    seed: int = 42

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if "config" in d and "config_hash" in d:  # a manifest
            d = d["config"]
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        d = copy.deepcopy(d)
        for name, defaults in _SECTIONS.items():
            section = d.get(name) or {}
            bad = sorted(set(section) - set(defaults))
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {bad}")
            d[name] = {**defaults, **section}
        models = d.get("models")
        if not models:
            models = {name: None for name in MODEL_ORDER}
        resolved = {}
        for name, grid in models.items():
            if name not in FAMILIES:
                raise ConfigError(f"unknown model family {name!r}; known: {list(FAMILIES)}")
            resolved[name] = copy.deepcopy(FAMILIES[name].default_grid) if grid is None else grid
            expand_grid(resolved[name])
        # canonical family order, so configs that differ only in key order run identically
        d["models"] = {name: resolved[name] for name in MODEL_ORDER if name in resolved}
        cfg = cls(**d)
        cfg.check_shape()
        return cfg

    def check_shape(self) -> None:
        if not isinstance(self.data, dict) or len(self.data) != 1 or next(iter(self.data)) not in ("csv", "synthesis"):
            raise ConfigError("data must be {'csv': path} or {'synthesis': {...}}")
        if not 0.0 < float(self.test_fraction) < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.vif_threshold is not None and not float(self.vif_threshold) > 1.0:
            raise ConfigError("vif_threshold must exceed 1 (or be null)")
        if int(self.eval["folds"]) < 2:
            raise ConfigError("eval.folds must be >= 2")
        if int(self.eval["n_resamples"]) < 0:
            raise ConfigError("eval.n_resamples must be >= 0")
        if not 0.0 < float(self.eval["alpha"]) < 1.0:
            raise ConfigError("eval.alpha must lie in (0, 1)")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        PreprocessConfig(outlier_z=float(self.preprocess["outlier_z"]))

    def to_dict(self) -> dict:
        return {name: copy.deepcopy(getattr(self, name)) for name in self.__dataclass_fields__}

    def with_overrides(self, seed: int | None = None, out: str | None = None) -> "RunConfig":
        d = self.to_dict()
        if seed is not None:
            d["seed"] = int(seed)
        if out is not None:
            d["out"] = str(out)
        return RunConfig.from_dict(d)

    def load_schema(self):
        if self.schema is not None and not Path(self.schema).exists():
            raise ConfigError(f"schema path {self.schema!r} does not exist")
        return load_schema(self.schema)

    def validate(self) -> None:
        """Run-time checks: referenced files exist and named features are in the schema."""
        schema = self.load_schema()
        names = {s.name for s in schema}
        if "csv" in self.data and not Path(self.data["csv"]).exists():
            raise ConfigError(f"data csv {self.data['csv']!r} does not exist")
        bad = sorted(set(self.exclude) - names)
        if bad:
            raise ConfigError(f"excluded features not in schema: {bad}")
        for cand in self.ablation["candidate_sets"]:
            bad = sorted(set(cand) - names)
            if bad:
                raise ConfigError(f"ablation candidate features not in schema: {bad}")

    def hash(self) -> str:
        return sha256_bytes(canonical_json({k: v for k, v in self.to_dict().items() if k != "out"}).encode())


def load_config(path: str | Path | None = None) -> RunConfig:
    if path is None:
        return RunConfig.from_dict(default_config_dict())
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {str(path)!r} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {str(path)!r} is not valid JSON: {exc}") from None
    return RunConfig.from_dict(d)


def stage_seed(master: int, stage: str) -> int:
    """Per-stage seed: the stage name hashed together with the master seed."""
    digest = hashlib.sha256(f"{int(master)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


# ------------------------------------------------------------------------- io


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(obj), sort_keys=True, indent=1) + "\n", encoding="utf-8")


def read_json(path: Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def write_rows(path: Path, rows: Sequence[dict], columns: Sequence[str] | None = None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(columns or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    path.write_text(buf.getvalue(), encoding="utf-8")


def read_rows(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def sha256_bytes(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def sha256_file(path: Path) -> str:
    return sha256_bytes(Path(path).read_bytes())


# --------------------------------------------------------------------- stages


@dataclass
class Stage:
    name: str
    deps: tuple
    func: Callable  # (Run) -> list of written relative paths
    optional_deps: tuple = ()


class Run:
    """A run directory bound to one resolved configuration."""

    def __init__(self, config: RunConfig, out: str | Path | None = None, echo: Callable[[str], None] | None = None):
        self.config = config
        self.dir = Path(out if out is not None else config.out)
        self.echo = echo or (lambda s: None)
        self.seeds = {name: stage_seed(config.seed, name) for name in STAGES}
        self.manifest_path = self.dir / "manifest.json"
        self.stages: dict = {}
        self.executed: list = []
        if self.manifest_path.exists():
            try:
                old = read_json(self.manifest_path)
            except (json.JSONDecodeError, OSError):
                old = {}
            if old.get("config_hash") == config.hash():
                self.stages = {k: v for k, v in old.get("stages", {}).items() if k in STAGES}

    def path(self, rel: str) -> Path:
        """Artifact path; parent directories are created on demand."""
        p = self.dir / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def need(self, rel: str, stage: str) -> Path:
        p = self.path(rel)
        if not p.exists():
            raise DataError(f"missing artifact {rel}; run the {stage!r} stage first")
        return p

    # ---- manifest
    def _key(self, stage: Stage) -> str:
        ups = {d: self.stages[d]["key"] for d in stage.deps}
        ups.update({d: self.stages[d]["key"] for d in stage.optional_deps if d in self.stages})
        return sha256_bytes(canonical_json({"stage": stage.name, "config": self.config.hash(), "upstream": ups}).encode())

    def _fresh(self, stage: Stage) -> bool:
        rec = self.stages.get(stage.name)
        if rec is None or rec.get("key") != self._key(stage):
            return False
        for rel, digest in rec["outputs"].items():
            p = self.path(rel)
            if not p.exists() or sha256_file(p) != digest:
                return False
        return True

    def manifest(self, failure: dict | None = None) -> dict:
        outputs = {}
        for rec in self.stages.values():
            outputs.update(rec["outputs"])
        m = {
            "package": {"name": "hfmort", "version": __version__},
            "environment": {
                "python": platform.python_version(),
                "numpy": np.__version__,
            },
            "config": self.config.to_dict(),
            "config_hash": self.config.hash(),
            "seeds": dict(sorted(self.seeds.items())),
            "stages": {k: self.stages[k] for k in STAGES if k in self.stages},
            "artifacts": dict(sorted(outputs.items())),
        }
        if failure:
            m["failure"] = failure
        return m

    def write_manifest(self, failure: dict | None = None) -> None:
        write_json(self.manifest_path, self.manifest(failure))

    # ---- execution
    def ensure(self, name: str) -> None:
        stage = STAGES[name]
        for d in stage.deps:
            self.ensure(d)
        if self._fresh(stage):
            return
        self.dir.mkdir(parents=True, exist_ok=True)
        try:
            written = stage.func(self)
        except HFMortError as exc:
            self.stages.pop(name, None)
            self.write_manifest({"stage": name, "error": f"{type(exc).__name__}: {exc}"})
            raise type(exc)(f"stage {name!r} failed: {exc}") from exc
        self.stages[name] = {
            "key": self._key(stage),
            "seed": self.seeds[name],
            "outputs": {rel: sha256_file(self.path(rel)) for rel in sorted(written)},
        }
        self.executed.append(name)
        self.write_manifest()

    def run(self, names: Sequence[str]) -> "Run":
        self.config.validate()
        for n in names:
            self.ensure(n)
        return self

    # ---- shared loaders
    def prepared_schema(self):
        return load_schema(self.need("prep/schema.json", "prep"))

    def train_test(self) -> tuple[Cohort, Cohort]:
        schema = self.prepared_schema()
        return (load_csv(self.need("prep/train.csv", "prep"), schema),
                load_csv(self.need("prep/test.csv", "prep"), schema))

    def modeling_features(self) -> list[str]:
        return read_json(self.need("stats/features.json", "vif"))["features"]

    def models(self) -> dict:
        names = read_json(self.need("models/index.json", "train"))["models"]
        return {n: load_model(read_json(self.need(f"models/{n}.json", "train"))) for n in names}


def _synth(run: Run) -> list[str]:
    cfg = run.config
    schema = cfg.load_schema()
    if "synthesis" in cfg.data:
        s = dict(cfg.data["synthesis"])
        seed = int(s.pop("seed", run.seeds["synth"]))
        try:
            spec = SynthesisSpec(schema, seed=seed, **s)
        except TypeError as exc:
            raise ConfigError(f"bad synthesis section: {exc}") from None
        cohort = synthesize(spec)
    else:
        cohort = load_csv(cfg.data["csv"], schema)
    write_csv(cohort, run.path("data/cohort.csv"))
    neg, pos = cohort.class_counts()
    write_json(run.path("data/summary.json"), {
        "rows": cohort.n, "features": cohort.p, "positives": pos, "negatives": neg,
        "missing_cells": cohort.n_missing(), "outcome_rate": pos / max(1, pos + neg),
    })
    run.echo(f"cohort: {cohort.n} rows, {cohort.p} features, {pos} positive outcomes")
    return ["data/cohort.csv", "data/summary.json"]


def _prep(run: Run) -> list[str]:
    cfg = run.config
    cohort = load_csv(run.need("data/cohort.csv", "synth"), cfg.load_schema())
    pcfg = PreprocessConfig(outlier_z=float(cfg.preprocess["outlier_z"]),
                            oversample_to_balance=bool(cfg.preprocess["oversample_to_balance"]))
    prep = prepare(cohort, pcfg, test_fraction=float(cfg.test_fraction), split_seed=run.seeds["prep"])
    write_schema(prep.train.schema, run.path("prep/schema.json"))
    write_csv(prep.train, run.path("prep/train.csv"))
    write_csv(prep.test, run.path("prep/test.csv"))
    write_json(run.path("prep/report.json"), prep.report.to_dict())
    run.path("prep/audit.txt").write_text(prep.report.audit_table() + "\n", encoding="utf-8")
    run.echo(prep.report.audit_table())
    return ["prep/schema.json", "prep/train.csv", "prep/test.csv", "prep/report.json", "prep/audit.txt"]


def _ttest(run: Run) -> list[str]:
    train, test = run.train_test()
    rows = []
    for r in t_test_table(train, test):
        rows.append({"feature": r.feature, "train_mean": r.mean_a, "train_std": r.std_a, "train_n": r.n_a,
                     "test_mean": r.mean_b, "test_std": r.std_b, "test_n": r.n_b,
                     "t": r.t_statistic, "df": r.degrees_of_freedom, "p_value": r.p_value})
    write_rows(run.path("stats/ttest.csv"), rows)
    run.echo(format_table(rows, ["feature", "train_mean", "train_std", "test_mean", "test_std", "p_value"]))
    return ["stats/ttest.csv"]


def _vif(run: Run) -> list[str]:
    cfg = run.config
    train, _ = run.train_test()
    train = train.drop_features([f for f in cfg.exclude if f in train.feature_names])
    removed: list = []
    info: dict = {"threshold": cfg.vif_threshold, "applicable": True}
    rows = []
    if cfg.vif_threshold is not None:
        try:
            rep = vif_filter(train, float(cfg.vif_threshold))
        except NotApplicableError as exc:
            info.update(applicable=False, reason=str(exc))
        else:
            info.update(rep.to_dict())
            removed = rep.removed
            rows = [{"feature": e.feature, "vif": e.vif_value, "removed": e.removed,
                     "removal_round": e.removal_round} for e in rep.entries]
    features = [f for f in train.feature_names if f not in set(removed)]
    write_json(run.path("stats/vif.json"), info)
    write_rows(run.path("stats/vif.csv"), rows, ["feature", "vif", "removed", "removal_round"])
    write_json(run.path("stats/features.json"), {"features": features, "excluded": list(cfg.exclude),
                                                 "vif_removed": removed})
    if rows:
        run.echo(format_table(rows))
    run.echo(f"{len(features)} modeling features ({len(removed)} removed by VIF, {len(cfg.exclude)} excluded)")
    return ["stats/vif.json", "stats/vif.csv", "stats/features.json"]


def family_seed(master: int, family: str) -> int:
    """Grid-search seed of one learner family; independent of which other families run."""
    return derived_seed(stage_seed(master, "train"), MODEL_ORDER.index(family))


def _search(cfg: RunConfig, family: str, train: Cohort):
    return grid_search(family, cfg.models[family], train, folds=int(cfg.eval["folds"]),
                       seed=family_seed(cfg.seed, family),
                       oversample_folds=bool(cfg.preprocess["oversample_to_balance"]))


def _train(run: Run) -> list[str]:
    cfg = run.config
    train, _ = run.train_test()
    train = train.select_features(run.modeling_features())
    written, summary = [], []
    for fam in cfg.models:
        res = _search(cfg, fam, train)
        write_json(run.path(f"models/{fam}.json"), res.model.to_dict())
        write_json(run.path(f"grid/{fam}.json"), res.to_dict())
        written += [f"models/{fam}.json", f"grid/{fam}.json"]
        summary.append({"model": fam, "cells": len(res.cells), "failed": len(res.failures),
                        "best_cv_auc": res.best_score, "best_params": canonical_json(res.best_params)})
        run.echo(f"{fam}: best mean CV AUC {res.best_score:.4f} at {res.best_params}")
    write_json(run.path("models/index.json"), {"models": list(cfg.models), "features": train.feature_names})
    write_rows(run.path("grid/summary.csv"), summary)
    return written + ["models/index.json", "grid/summary.csv"]


def _eval(run: Run) -> list[str]:
    cfg = run.config
    train, test = run.train_test()
    ev = cfg.eval
    tr, te = comparison_report(run.models(), train, test, int(ev["n_resamples"]), run.seeds["eval"],
                               float(ev["alpha"]), float(ev["threshold"]))
    write_rows(run.path("eval/train_report.csv"), report_rows(tr), REPORT_COLUMNS)
    write_rows(run.path("eval/test_report.csv"), report_rows(te), REPORT_COLUMNS)
    write_json(run.path("eval/reports.json"), {"train": report_rows(tr), "test": report_rows(te),
                                               "n_resamples": ev["n_resamples"], "alpha": ev["alpha"]})
    run.echo("train\n" + format_table(report_rows(tr), REPORT_COLUMNS[:1] + REPORT_COLUMNS[2:]))
    run.echo("test\n" + format_table(report_rows(te), REPORT_COLUMNS[:1] + REPORT_COLUMNS[2:]))
    return ["eval/train_report.csv", "eval/test_report.csv", "eval/reports.json"]


def _roc(run: Run) -> list[str]:
    _, test = run.train_test()
    written, series = [], []
    for name, model in run.models().items():
        curve = roc_curve(model.predict_proba(test), test.y)
        rows = [{"fpr": f, "tpr": t, "threshold": h} for f, t, h in curve.rows()]
        write_rows(run.path(f"roc/{name}.csv"), rows, ["fpr", "tpr", "threshold"])
        written.append(f"roc/{name}.csv")
        series.append((f"{name} (AUC {curve.area():.3f})", list(zip(curve.fpr, curve.tpr))))
    run.path("roc/roc.svg").write_text(svg.line_chart("ROC, test cohort", series, "false positive rate",
                                                      "true positive rate", diagonal=True), encoding="utf-8")
    return written + ["roc/roc.svg"]


def _shap(run: Run) -> list[str]:
    cfg = run.config
    _, test = run.train_test()
    models = run.models()
    boosted = [m for m in models.values() if isinstance(m, BoostedEnsemble)]
    if not boosted:
        raise ConfigError("shap needs the boosted_trees family in the model list")
    model = boosted[0]
    rows = test.select_features(list(model.feature_names))
    mat = tree_shap(model, rows)
    summary = shap_summary(mat, rows, min(int(cfg.shap["top_k"]), rows.p))
    write_rows(run.path("shap/ranking.csv"), summary.ranking_rows(), ["rank", "feature", "mean_abs_shap"])
    write_rows(run.path("shap/beeswarm.csv"), summary.beeswarm_rows(), ["feature", "value", "shap"])
    directions = [{"feature": f, "sign": direction_check(mat, rows, f)} for f in model.feature_names]
    write_rows(run.path("shap/directions.csv"), directions, ["feature", "sign"])
    imp = [{"feature": f, "gain": g} for f, g in gain_importance(model)]
    write_rows(run.path("shap/importance.csv"), imp, ["feature", "gain"])
    margin = model.predict_margin(rows)
    err = float(np.max(np.abs(mat.base_value + mat.values.sum(axis=1) - margin))) if rows.n else 0.0
    write_json(run.path("shap/meta.json"), {"base_value": mat.base_value, "rows": rows.n,
                                            "max_additivity_error": err, "dataset": "test"})
    run.echo(format_table(summary.ranking_rows()))
    return ["shap/ranking.csv", "shap/beeswarm.csv", "shap/directions.csv", "shap/importance.csv", "shap/meta.json"]


# ------------------------------------------------------------------- ablation


@dataclass(frozen=True)
class AblationEntry:
    excluded: tuple
    family: str
    best_params: dict
    auc: float
    distribution: np.ndarray  # per-bootstrap test AUC
    n_features: int

    @property
    def label(self) -> str:
        return "-".join(self.excluded) if self.excluded else BASELINE_LABEL

    @property
    def mean_auc(self) -> float:
        return float(self.distribution.mean()) if self.distribution.size else self.auc

    def box(self) -> tuple:
        d = self.distribution if self.distribution.size else np.array([self.auc])
        q = np.quantile(d, [0.025, 0.25, 0.5, 0.75, 0.975])
        return (self.label, *map(float, q), self.mean_auc)


@dataclass(frozen=True)
class AblationReport:
    entries: tuple  # ordered: candidate sets in order (baseline first), families within

    @property
    def families(self) -> list[str]:
        return list(dict.fromkeys(e.family for e in self.entries))

    def for_family(self, family: str | None = None) -> list[AblationEntry]:
        family = family or self.families[0]
        return [e for e in self.entries if e.family == family]

    def best(self, family: str | None = None) -> AblationEntry:
        rows = self.for_family(family)
        return max(rows, key=lambda e: (e.mean_auc, -rows.index(e)))

    def baseline(self, family: str | None = None) -> AblationEntry:
        return self.for_family(family)[0]

    def rows(self) -> list[dict]:
        out = []
        for e in self.entries:
            lab, lo, q1, med, q3, hi, mean = e.box()
            out.append({"configuration": lab, "family": e.family, "excluded": ";".join(e.excluded),
                        "n_features": e.n_features, "auc": e.auc, "mean_auc": mean, "p2_5": lo, "q1": q1,
                        "median": med, "q3": q3, "p97_5": hi, "best_params": canonical_json(e.best_params)})
        return out


def normalize_candidates(candidate_sets) -> list[tuple]:
    """Deduplicate (order kept) and put the empty baseline set first."""
    seen, out = set(), [()]
    for c in candidate_sets:
        key = tuple(sorted(set(c)))
        if key and key not in seen:
            seen.add(key)
            out.append(tuple(c) if len(set(c)) == len(c) else tuple(dict.fromkeys(c)))
    return out


def ablate(config: RunConfig, train: Cohort, test: Cohort, candidate_sets, families: Sequence[str] | None = None,
           n_resamples: int | None = None) -> AblationReport:
    """Drop each candidate set from the modeling features, redo grid search and test evaluation.

    Every configuration uses the same search seed and the same bootstrap
    index sets, so differences between configurations are paired.
    """
    names = set(train.feature_names)
    sets = normalize_candidates(candidate_sets)
    for c in sets:
        bad = sorted(set(c) - names)
        if bad:
            raise ConfigError(f"ablation candidate features not available: {bad}")
    families = list(families or ["boosted_trees"])
    for fam in families:
        if fam not in FAMILIES:
            raise ConfigError(f"unknown model family {fam!r}")
    B = int(config.eval["n_resamples"] if n_resamples is None else n_resamples)
    boot_seed = stage_seed(config.seed, "eval")
    entries = []
    for c in sets:
        tr = train.drop_features(c)
        for fam in families:
            res = _search(config, fam, tr)
            scores = res.model.predict_proba(test)
            dist = bootstrap_auc_distribution(scores, test.y, B, boot_seed) if B > 0 else np.array([])
            entries.append(AblationEntry(tuple(c), fam, res.best_params, auc(scores, test.y), dist, tr.p))
    return AblationReport(tuple(entries))


def run_ablation(config: RunConfig, candidate_sets=None, all_families: bool | None = None,
                 out: str | Path | None = None) -> AblationReport:
    """Ablation on the configured cohort; writes ``ablation/`` artifacts into the run directory."""
    if candidate_sets is not None:
        d = config.to_dict()
        d["ablation"] = {**d["ablation"], "candidate_sets": [list(c) for c in candidate_sets]}
        if all_families is not None:
            d["ablation"]["all_families"] = bool(all_families)
        config = RunConfig.from_dict(d)
    elif all_families is not None:
        d = config.to_dict()
        d["ablation"]["all_families"] = bool(all_families)
        config = RunConfig.from_dict(d)
    run = Run(config, out)
    run.run(["ablate"])
    return load_ablation(run)


def _ablate(run: Run) -> list[str]:
    cfg = run.config
    train, test = run.train_test()
    train = train.select_features(run.modeling_features())
    fams = list(cfg.models) if cfg.ablation["all_families"] else ["boosted_trees"]
    rep = ablate(cfg, train, test, cfg.ablation["candidate_sets"], fams)
    rows = rep.rows()
    write_rows(run.path("ablation/summary.csv"), rows)
    dist_rows = [{"configuration": e.label, "family": e.family, "resample": i, "auc": v}
                 for e in rep.entries for i, v in enumerate(e.distribution.tolist())]
    write_rows(run.path("ablation/distributions.csv"), dist_rows, ["configuration", "family", "resample", "auc"])
    best = {fam: rep.best(fam).label for fam in rep.families}
    write_json(run.path("ablation/ablation.json"), {
        "configurations": [{"excluded": list(e.excluded), "family": e.family, "auc": e.auc, "mean_auc": e.mean_auc,
                            "best_params": e.best_params, "n_features": e.n_features} for e in rep.entries],
        "best": best,
    })
    run.echo(format_table(rows, ["configuration", "family", "n_features", "auc", "mean_auc", "p2_5", "p97_5"]))
    return ["ablation/summary.csv", "ablation/distributions.csv", "ablation/ablation.json"]


def load_ablation(run: Run) -> AblationReport:
    meta = read_json(run.need("ablation/ablation.json", "ablate"))
    dists: dict = {}
    for r in read_rows(run.need("ablation/distributions.csv", "ablate")):
        dists.setdefault((r["configuration"], r["family"]), []).append(float(r["auc"]))
    entries = []
    for c in meta["configurations"]:
        label = "-".join(c["excluded"]) if c["excluded"] else BASELINE_LABEL
        entries.append(AblationEntry(tuple(c["excluded"]), c["family"], c["best_params"], c["auc"],
                                     np.array(dists.get((label, c["family"]), [])), c["n_features"]))
    return AblationReport(tuple(entries))


# -------------------------------------------------------------------- figures


def emit_figures(run_dir: str | Path) -> list[str]:
    """Write SVG figures plus their underlying CSV from an existing run directory."""
    d = Path(run_dir)
    fig = d / "figures"

    def need(rel, stage):
        p = d / rel
        if not p.exists():
            raise DataError(f"figures need {rel}; run the {stage!r} stage first")
        return p

    written = []

    def save(name, text):
        (fig / name).parent.mkdir(parents=True, exist_ok=True)
        (fig / name).write_text(text, encoding="utf-8")
        written.append(f"figures/{name}")

    imp = read_rows(need("shap/importance.csv", "shap"))[:20]
    write_rows(fig / "importance.csv", imp, ["feature", "gain"])
    written.append("figures/importance.csv")
    save("importance.svg", svg.bar_chart("Boosted-tree gain importance (top 20)", [r["feature"] for r in imp],
                                         [float(r["gain"]) for r in imp], "total split gain"))

    names = read_json(need("models/index.json", "train"))["models"]
    series, roc_rows = [], []
    for name in names:
        pts = read_rows(need(f"roc/{name}.csv", "roc"))
        xy = [(float(r["fpr"]), float(r["tpr"])) for r in pts]
        series.append((name, xy))
        roc_rows += [{"model": name, **r} for r in pts]
    write_rows(fig / "roc_points.csv", roc_rows, ["model", "fpr", "tpr", "threshold"])
    written.append("figures/roc_points.csv")
    save("roc.svg", svg.line_chart("ROC curves, test cohort", series, "false positive rate", "true positive rate",
                                   diagonal=True))

    ranking = read_rows(need("shap/ranking.csv", "shap"))
    write_rows(fig / "shap_ranking.csv", ranking, ["rank", "feature", "mean_abs_shap"])
    written.append("figures/shap_ranking.csv")
    save("shap_bar.svg", svg.bar_chart("Mean |SHAP| (log-odds)", [r["feature"] for r in ranking],
                                       [float(r["mean_abs_shap"]) for r in ranking], "mean |attribution|"))
    bees = read_rows(need("shap/beeswarm.csv", "shap"))
    write_rows(fig / "shap_beeswarm.csv", bees, ["feature", "value", "shap"])
    written.append("figures/shap_beeswarm.csv")
    save("shap_beeswarm.svg", svg.beeswarm_chart("SHAP summary", [r["feature"] for r in ranking],
                                                 [(r["feature"], float(r["value"]), float(r["shap"])) for r in bees]))

    if (d / "ablation/ablation.json").exists():
        rep = load_ablation(_DirView(d))
        fam = rep.families[0]
        boxes = [e.box() for e in rep.for_family(fam)]
        rows = [{"configuration": b[0], "p2_5": b[1], "q1": b[2], "median": b[3], "q3": b[4], "p97_5": b[5],
                 "mean": b[6]} for b in boxes]
        write_rows(fig / "ablation_boxes.csv", rows, ["configuration", "p2_5", "q1", "median", "q3", "p97_5", "mean"])
        written.append("figures/ablation_boxes.csv")
        save("ablation.svg", svg.box_chart(f"Ablation, bootstrap test AUC ({fam})", boxes, "AUC"))
    return written


class _DirView:
    """Minimal stand-in for Run when only reading artifacts."""

    def __init__(self, d: Path):
        self.dir = d

    def need(self, rel, stage):
        p = self.dir / rel
        if not p.exists():
            raise DataError(f"missing artifact {rel}; run the {stage!r} stage first")
        return p


def _figures(run: Run) -> list[str]:
    return emit_figures(run.dir)


STAGES = {
    "synth": Stage("synth", (), _synth),
    "prep": Stage("prep", ("synth",), _prep),
    "ttest": Stage("ttest", ("prep",), _ttest),
    "vif": Stage("vif", ("prep",), _vif),
    "train": Stage("train", ("prep", "vif"), _train),
    "eval": Stage("eval", ("train",), _eval),
    "roc": Stage("roc", ("train",), _roc),
    "shap": Stage("shap", ("train",), _shap),
    "ablate": Stage("ablate", ("prep", "vif"), _ablate),
    "figures": Stage("figures", ("train", "roc", "shap"), _figures, optional_deps=("ablate",)),
}
RUN_STAGES = ("synth", "prep", "ttest", "vif", "train", "eval", "roc", "shap", "figures")


def run_pipeline(config: RunConfig, out: str | Path | None = None, echo=None) -> Run:
    """Execute every stage of an end-to-end run (ablation excluded) and return the run."""
    return Run(config, out, echo).run(RUN_STAGES)
