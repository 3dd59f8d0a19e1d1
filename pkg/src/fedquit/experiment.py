"""Experiment configs, the train/unlearn/recover/report pipeline, and result tables.

Config files are flat ``section.key = value`` lines (``#`` starts a comment;
values are JSON literals or bare strings).  A JSON file holding the same keys,
flat or nested by section, is accepted too.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (Dataset, FederationData, PartitionSpec, build_federation, generate_blobs,
                   load_csv, partition_manifest, retain_set)
from .errors import ConfigError, DomainError, ParseError
from .evaluation import MetricsReport, accuracy, report, summarize
from .federation import (FederationConfig, FederationState, RecoveryResult, RoundReport,
                         recover, run_fedavg, unlearning_round)
from .nn import MLPArchitecture, init_params, load_checkpoint, save_checkpoint
from .unlearning import TeacherVariant, UnlearnConfig, fedquit_unlearn, natural_baseline

logger = logging.getLogger(__name__)

REQUIRED = object()

METHODS = ("fedquit-logits", "fedquit-softmax", "incompetent", "natural")

# key -> (type, default)
SCHEMA: dict[str, tuple[type, object]] = {
    "dataset.kind": (str, "blobs"),
    "dataset.num_classes": (int, 3),
    "dataset.per_class": (int, 300),
    "dataset.dim": (int, 2),
    "dataset.spread": (float, 0.5),
    "dataset.test_per_class": (int, 100),
    "dataset.path": (str, None),
    "dataset.test_path": (str, None),
    "partition.kind": (str, "dirichlet"),
    "partition.num_clients": (int, REQUIRED),
    "partition.alpha": (float, 0.3),
    "model.hidden": (list, [16]),
    "model.activation": (str, "relu"),
    "federation.rounds": (int, REQUIRED),
    "federation.local_epochs": (int, 1),
    "federation.lr": (float, 0.1),
    "federation.lr_decay": (float, 0.998),
    "federation.batch_size": (int, 32),
    "federation.server_lr": (float, 1.0),
    "unlearn.method": (str, "fedquit-logits"),
    "unlearn.v": (str, "0"),
    "unlearn.epochs": (int, 1),
    "unlearn.lr": (float, 1e-3),
    "unlearn.batch_size": (int, 32),
    "unlearn.optimizer": (str, "adam"),
    "unlearn.temperature": (float, 1.0),
    "experiment.unlearn_client": (str, "each"),
    "experiment.seeds": (list, [0]),
    "experiment.out": (str, "runs/default"),
    "experiment.cache": (str, None),
    "experiment.max_recovery_rounds": (int, None),
}

TRAINING_SECTIONS = ("dataset", "partition", "model", "federation")


def _parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip("\"'")


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def read_config_file(path) -> dict:
    """Raw dotted-key mapping from a key-value or JSON config file."""
    text = Path(path).read_text()
    if str(path).endswith(".json") or text.lstrip().startswith("{"):
        try:
            return _flatten(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key}", key)
        raw[key] = _parse_value(value)
    return raw


def _coerce(key, typ, value):
    try:
        if typ is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if typ is float:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if typ is list:
            return list(value) if isinstance(value, (list, tuple)) else [value]
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot read {value!r} as {typ.__name__}", key) from None


def parse_v(text, num_classes: int):
    """``"min"``, ``"1/C"`` or a number."""
    s = str(text).strip()
    if s == "min":
        return "min"
    if s.upper() == "1/C":
        return 1.0 / num_classes
    try:
        return float(s)
    except ValueError:
        raise ConfigError(f"unlearn.v: cannot read {text!r}", "unlearn.v") from None


@dataclass
class ExperimentConfig:
    values: dict
    arch: MLPArchitecture
    partition: PartitionSpec
    federation: FederationConfig
    unlearn: UnlearnConfig
    method: str
    unlearn_clients: list[int] | str
    seeds: list[int]
    out: str
    max_recovery_rounds: int

    @property
    def num_clients(self) -> int:
        return self.partition.num_clients

    @property
    def num_classes(self) -> int:
        return self.arch.num_classes

    def clients(self) -> list[int]:
        return list(range(self.num_clients)) if self.unlearn_clients == "each" \
            else list(self.unlearn_clients)

    def method_tag(self) -> str:
        if self.method in ("fedquit-logits", "fedquit-softmax"):
            v = self.values["unlearn.v"]
            return f"{self.method}_v{str(v).replace('/', '-')}"
        return self.method

    def hash(self, sections=None) -> str:
        items = {k: v for k, v in sorted(self.values.items())
                 if sections is None or k.split(".")[0] in sections}
        items.pop("experiment.out", None)
        items.pop("experiment.cache", None)
        return hashlib.sha256(json.dumps(items, sort_keys=True).encode()).hexdigest()[:16]

    def for_seed(self, seed: int) -> ExperimentConfig:
        return self.with_overrides({"experiment.seeds": [seed]})

    def with_overrides(self, overrides: dict) -> ExperimentConfig:
        vals = dict(self.values)
        vals.update(overrides)
        return build_config(vals)


def build_config(raw: dict) -> ExperimentConfig:
    """Validate a dotted-key mapping, fill defaults, and build typed configs."""
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]}", unknown[0])
    vals = {}
    for key, (typ, default) in SCHEMA.items():
        if key in raw and raw[key] is not None:
            vals[key] = _coerce(key, typ, raw[key])
        elif default is REQUIRED:
            raise ConfigError(f"missing required key {key}", key)
        else:
            vals[key] = default

    def check(ok, key, msg):
        if not ok:
            raise ConfigError(f"{key}: {msg} (got {vals[key]!r})", key)

    check(vals["dataset.kind"] in ("blobs", "csv"), "dataset.kind", "must be blobs or csv")
    if vals["dataset.kind"] == "csv":
        check(vals["dataset.path"] is not None, "dataset.path", "required for csv data")
        check(vals["dataset.test_path"] is not None, "dataset.test_path", "required for csv data")
    check(vals["dataset.num_classes"] >= 2, "dataset.num_classes", "must be at least 2")
    check(vals["dataset.per_class"] >= 1, "dataset.per_class", "must be at least 1")
    check(vals["dataset.test_per_class"] >= 1, "dataset.test_per_class", "must be at least 1")
    check(vals["dataset.dim"] >= 1, "dataset.dim", "must be at least 1")
    check(vals["dataset.spread"] > 0, "dataset.spread", "must be positive")
    check(vals["partition.kind"] in ("iid", "dirichlet"), "partition.kind", "must be iid or dirichlet")
    check(vals["partition.num_clients"] >= 2, "partition.num_clients", "must be at least 2")
    # the short name matters: error messages for alpha should say `alpha`
    if not vals["partition.alpha"] > 0:
        raise ConfigError(f"alpha must be positive (got {vals['partition.alpha']})",
                          "partition.alpha")
    check(vals["unlearn.method"] in METHODS, "unlearn.method", f"must be one of {METHODS}")
    check(vals["model.activation"] in ("relu", "tanh"), "model.activation", "must be relu or tanh")
    check(len(vals["experiment.seeds"]) >= 1, "experiment.seeds", "need at least one seed")

    if vals["dataset.kind"] == "csv":
        # class count and dim come from the file when reading CSV
        probe = load_csv(vals["dataset.path"])
        vals["dataset.num_classes"] = max(vals["dataset.num_classes"], probe.num_classes)
        vals["dataset.dim"] = probe.feature_dim

    k = vals["partition.num_clients"]
    uc = vals["experiment.unlearn_client"]
    if uc == "each":
        clients = "each"
    else:
        try:
            clients = [int(uc)]
        except ValueError:
            raise ConfigError(f"experiment.unlearn_client: {uc!r} is not a client index or 'each'",
                              "unlearn_client") from None
        if not 0 <= clients[0] < k:
            raise ConfigError(
                f"unlearn_client {clients[0]} out of range for {k} clients", "unlearn_client")

    try:
        hidden = [int(h) for h in vals["model.hidden"]]
        arch = MLPArchitecture(
            (vals["dataset.dim"], *hidden, vals["dataset.num_classes"]), vals["model.activation"])
    except (DomainError, ValueError, TypeError) as exc:
        raise ConfigError(f"model.hidden: {exc}", "model.hidden") from None

    seeds = [_coerce("experiment.seeds", int, s) for s in vals["experiment.seeds"]]
    try:
        fed_cfg = FederationConfig(
            rounds=vals["federation.rounds"], local_epochs=vals["federation.local_epochs"],
            lr=vals["federation.lr"], lr_decay=vals["federation.lr_decay"],
            batch_size=vals["federation.batch_size"], server_lr=vals["federation.server_lr"],
            seed=seeds[0])
    except DomainError as exc:
        key = "federation." + str(exc).split()[0]
        raise ConfigError(f"{key}: {exc}", key) from None

    method = vals["unlearn.method"]
    v = parse_v(vals["unlearn.v"], vals["dataset.num_classes"])
    try:
        if method == "fedquit-logits":
            variant = TeacherVariant.logits_min() if v == "min" else TeacherVariant.logits_fixed(v)
        elif method == "fedquit-softmax":
            if v == "min":
                raise DomainError("the softmax teacher takes a number for v")
            variant = TeacherVariant.softmax_fixed(v)
        else:
            variant = TeacherVariant.incompetent()
        ucfg = UnlearnConfig(variant, vals["unlearn.epochs"], vals["unlearn.lr"],
                             vals["unlearn.batch_size"], vals["unlearn.optimizer"],
                             vals["unlearn.temperature"], seeds[0])
    except DomainError as exc:
        raise ConfigError(f"unlearn: {exc}", "unlearn.v") from None

    max_rec = vals["experiment.max_recovery_rounds"]
    if max_rec is None:
        max_rec = 2 * vals["federation.rounds"]
    check(max_rec >= 1, "experiment.max_recovery_rounds", "must be at least 1")

    return ExperimentConfig(
        values=vals, arch=arch,
        partition=PartitionSpec(vals["partition.kind"], k, vals["partition.alpha"], seeds[0]),
        federation=fed_cfg, unlearn=ucfg, method=method, unlearn_clients=clients,
        seeds=seeds, out=vals["experiment.out"], max_recovery_rounds=max_rec)


def parse_config(path, overrides: dict | None = None) -> ExperimentConfig:
    raw = read_config_file(path)
    if overrides:
        raw.update(overrides)
    return build_config(raw)


def derive_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(100, tag)).generate_state(1)[0])


def seeded(cfg: ExperimentConfig, seed: int):
    """Per-seed copies of the typed configs."""
    from dataclasses import replace
    return (replace(cfg.partition, seed=derive_seed(seed, 2)),
            replace(cfg.federation, seed=seed),
            replace(cfg.unlearn, seed=derive_seed(seed, 4)))


def load_data(cfg: ExperimentConfig, seed: int) -> tuple[Dataset, Dataset]:
    v = cfg.values
    if v["dataset.kind"] == "csv":
        c = cfg.num_classes
        return load_csv(v["dataset.path"], c), load_csv(v["dataset.test_path"], c)
    c, d, s = v["dataset.num_classes"], v["dataset.dim"], v["dataset.spread"]
    train = generate_blobs(c, v["dataset.per_class"], d, s, derive_seed(seed, 0))
    test = generate_blobs(c, v["dataset.test_per_class"], d, s, derive_seed(seed, 1))
    return train, test


def make_federation(cfg: ExperimentConfig, seed: int) -> FederationData:
    train, test = load_data(cfg, seed)
    return build_federation(train, test, seeded(cfg, seed)[0])


def initial_params(cfg: ExperimentConfig, seed: int):
    return init_params(cfg.arch, np.random.default_rng(derive_seed(seed, 3)))


def unlearn(cfg: ExperimentConfig, params, forget: Dataset, seed: int):
    """Apply the configured method; returns the new model (natural: unchanged)."""
    if cfg.method == "natural":
        return natural_baseline(params)
    return fedquit_unlearn(params, forget, seeded(cfg, seed)[2])


# ---------------------------------------------------------------- artifacts

def _write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True))
    os.replace(tmp, path)


def _read_json(path: Path):
    return json.loads(path.read_text())


def _state_dict(state: FederationState) -> dict:
    return {"round": state.round, "bytes_up": state.bytes_up, "bytes_down": state.bytes_down,
            "last_round_bytes": state.last_round_bytes}


def _history_rows(history: list[RoundReport], **tags) -> list[dict]:
    return [{**tags, **h.as_row()} for h in history]


class Manifest:
    """Run manifest tracking which stages have completed, flushed after each."""

    def __init__(self, out: Path, cfg: ExperimentConfig):
        self.path = out / "manifest.json"
        self.data = {"config": cfg.values, "config_hash": cfg.hash(),
                     "training_hash": cfg.hash(TRAINING_SECTIONS), "seeds": cfg.seeds,
                     "method": cfg.method_tag(), "stages": {}, "files": [], "complete": False}
        if self.path.exists():
            old = _read_json(self.path)
            if old.get("config_hash") == self.data["config_hash"]:
                self.data["stages"] = old.get("stages", {})
                self.data["files"] = old.get("files", [])

    def done(self, stage: str) -> bool:
        return self.data["stages"].get(stage) == "done"

    def mark(self, stage: str, *files: Path) -> None:
        self.data["stages"][stage] = "done"
        for f in files:
            try:
                name = f.relative_to(self.path.parent).as_posix()
            except ValueError:
                name = str(f.resolve())
            if name not in self.data["files"]:
                self.data["files"].append(name)
        self.flush()

    def flush(self) -> None:
        _write_json(self.path, self.data)


@dataclass
class RunArtifacts:
    out: Path
    manifest: dict
    reports: list[MetricsReport]
    aggregate: dict
    history: list[dict] = field(default_factory=list)

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.reports)


def train_original(cfg: ExperimentConfig, seed: int, fed: FederationData, seed_dir: Path):
    """Train (or load the cached) all-client model for ``seed``."""
    ckpt, meta = seed_dir / "original.bin", seed_dir / "original.json"
    th = cfg.hash(TRAINING_SECTIONS)
    if ckpt.exists() and meta.exists() and _read_json(meta).get("training_hash") == th:
        m = _read_json(meta)
        params = load_checkpoint(ckpt, cfg.arch.hidden_activation)
        return FederationState(params, **m["state"]), m["history"]
    fed_cfg = seeded(cfg, seed)[1]
    state, history = run_fedavg(fed, fed_cfg, initial_params(cfg, seed))
    rows = _history_rows(history, seed=seed, client=-1, method="original")
    save_checkpoint(state.params, ckpt)
    _write_json(meta, {"training_hash": th, "state": _state_dict(state), "history": rows,
                       "partition": partition_manifest(seeded(cfg, seed)[0], fed.client_shards)})
    return state, rows


def train_retrained(cfg: ExperimentConfig, seed: int, u: int, fed: FederationData,
                    seed_dir: Path):
    """Gold standard without client ``u``: same init, same round budget.  Cached per (seed, u)."""
    ckpt, meta = seed_dir / f"retrained_u{u}.bin", seed_dir / f"retrained_u{u}.json"
    th = cfg.hash(TRAINING_SECTIONS)
    if ckpt.exists() and meta.exists() and _read_json(meta).get("training_hash") == th:
        return load_checkpoint(ckpt, cfg.arch.hidden_activation), _read_json(meta)["history"]
    fed_cfg = seeded(cfg, seed)[1]
    state, history = run_fedavg(fed, fed_cfg, initial_params(cfg, seed), exclude={u})
    rows = _history_rows(history, seed=seed, client=u, method="retrained")
    save_checkpoint(state.params, ckpt)
    _write_json(meta, {"training_hash": th, "test_acc": history[-1].test_acc, "history": rows})
    return state.params, rows


def run_single(cfg: ExperimentConfig, seed: int, u: int, fed: FederationData,
               original: FederationState, retrained, method_dir: Path):
    """Unlearn client ``u`` from ``original``, recover, and evaluate."""
    forget = fed.shard(u)
    unlearned = unlearn(cfg, original.params, forget, seed)
    if cfg.method == "natural":
        state = original.copy()
        unlearning_bytes = 0
    else:
        state = unlearning_round(original, unlearned, u)
        unlearning_bytes = state.last_round_bytes
    save_checkpoint(unlearned, method_dir / f"unlearned_u{u}.bin")

    target = accuracy(retrained, fed.test_set)
    fed_cfg = seeded(cfg, seed)[1]
    rec = recover(state, fed, fed_cfg, {u}, target, cfg.max_recovery_rounds)
    save_checkpoint(rec.state.params, method_dir / f"recovered_u{u}.bin")

    rep = report(rec.state.params, retrained, original.params, forget, retain_set(fed, u),
                 fed.test_set, method=cfg.method_tag(), seed=seed, client=u, recovery=rec,
                 retrain_rounds=cfg.federation.rounds, bytes_total=rec.state.bytes_total,
                 unlearning_bytes=unlearning_bytes, post_unlearning=unlearned,
                 mia_seed=derive_seed(seed, 5), tau=cfg.unlearn.tau)
    rows = _history_rows(rec.history, seed=seed, client=u, method=cfg.method_tag())
    return rep, rows


HISTORY_FIELDS = ("seed", "client", "method", "phase", "round", "lr", "mean_client_loss",
                  "test_acc", "bytes")


def report_row(r: MetricsReport) -> dict:
    return {
        "method": r.method, "seed": r.seed, "client": r.client,
        "recovery_rounds": "" if r.recovery_rounds is None else r.recovery_rounds,
        "converged": int(r.converged), "ce": "" if r.ce is None else r.ce,
        "test_acc": r.test_acc, "forget_acc": r.forget_acc,
        "mia_song_rate": r.mia_song_rate, "mia_yeom_rate": r.mia_yeom_rate,
        "delta_forget_acc": r.delta_forget_acc, "delta_mia_song": r.delta_mia_song,
        "delta_mia_yeom": r.delta_mia_yeom, "test_acc_drop": r.test_acc_drop,
        "bytes_total": r.bytes_total, "unlearning_bytes": r.unlearning_bytes,
    }


def _write_csv(path: Path, rows: list[dict], fields) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in fields})


def run_pipeline(cfg: ExperimentConfig, out: str | Path | None = None) -> RunArtifacts:
    """Train, unlearn, recover and report for every seed and designated client.

    Artifacts already present for the same config are reused, so an aborted
    run resumes from its last completed stage.  Original and retrained models
    are cached by the training part of the config only; pointing
    ``experiment.cache`` of several runs at one directory shares them across
    unlearning methods.
    """
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cache = Path(cfg.values["experiment.cache"] or out)
    manifest = Manifest(out, cfg)
    manifest.flush()
    reports: list[MetricsReport] = []
    history: list[dict] = []
    tag = cfg.method_tag()
    for seed in cfg.seeds:
        seed_dir = cache / f"seed{seed}"
        method_dir = out / f"seed{seed}" / tag
        seed_dir.mkdir(parents=True, exist_ok=True)
        method_dir.mkdir(parents=True, exist_ok=True)
        fed = make_federation(cfg, seed)
        original, rows = train_original(cfg, seed, fed, seed_dir)
        history += rows
        manifest.mark(f"seed{seed}/original", seed_dir / "original.bin")
        for u in cfg.clients():
            stage = f"seed{seed}/{tag}/u{u}"
            rep_path = method_dir / f"report_u{u}.json"
            retrained, rrows = train_retrained(cfg, seed, u, fed, seed_dir)
            history += rrows
            manifest.mark(f"seed{seed}/retrained_u{u}", seed_dir / f"retrained_u{u}.bin")
            if manifest.done(stage) and rep_path.exists():
                saved = _read_json(rep_path)
                reports.append(MetricsReport.from_dict(saved["report"]))
                history += saved["history"]
                continue
            rep, hrows = run_single(cfg, seed, u, fed, original, retrained, method_dir)
            _write_json(rep_path, {"report": rep.to_dict(), "history": hrows})
            reports.append(rep)
            history += hrows
            manifest.mark(stage, rep_path, method_dir / f"unlearned_u{u}.bin",
                          method_dir / f"recovered_u{u}.bin")
            logger.info("seed %d client %d: rounds=%s forget_acc=%.3f (delta %.3f)", seed, u,
                        rep.recovery_rounds, rep.forget_acc, rep.delta_forget_acc)

    agg = summarize(reports)
    agg["retrain_rounds"] = cfg.federation.rounds
    rounds = agg["recovery_rounds"]["mean"]
    agg["ce_of_mean_rounds"] = None if rounds is None else cfg.federation.rounds / max(rounds, 1)
    _write_json(out / "report.json", {"method": tag, "config_hash": cfg.hash(),
                                      "reports": [r.to_dict() for r in reports],
                                      "aggregate": agg})
    _write_csv(out / "report.csv", [report_row(r) for r in reports], REPORT_FIELDS)
    _write_csv(out / "history.csv", history, HISTORY_FIELDS)
    manifest.mark("report", out / "report.json", out / "report.csv", out / "history.csv")
    manifest.data["complete"] = True
    manifest.flush()
    return RunArtifacts(out, manifest.data, reports, agg, history)


REPORT_FIELDS = ("method", "seed", "client", "recovery_rounds", "converged", "ce", "test_acc",
                 "forget_acc", "mia_song_rate", "mia_yeom_rate", "delta_forget_acc",
                 "delta_mia_song", "delta_mia_yeom", "test_acc_drop", "bytes_total",
                 "unlearning_bytes")


# ---------------------------------------------------------------- comparison

COMPARE_COLUMNS = ("method", "runs", "rounds_mean", "rounds_std", "ce", "test_acc_mean",
                   "test_acc_std", "forget_acc_mean", "delta_forget_acc_mean",
                   "delta_forget_acc_std", "mia_song_mean", "delta_mia_song_mean",
                   "delta_mia_song_std", "mia_yeom_mean", "delta_mia_yeom_mean",
                   "delta_mia_yeom_std")


def load_reports(path) -> list[MetricsReport]:
    """Reports from a pipeline ``report.json`` or a single serialized report."""
    try:
        data = _read_json(Path(path))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    items = data.get("reports", [data]) if isinstance(data, dict) else None
    if not items:
        raise ParseError(f"{path}: no reports found")
    try:
        return [MetricsReport.from_dict(d) for d in items]
    except (ParseError, DomainError, TypeError) as exc:
        raise ParseError(f"{path}: {exc}") from None


def _ms(vals):
    vals = [v for v in vals if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


def compare_rows(groups: list[list[MetricsReport]]) -> list[dict]:
    """One row per method; deltas are recomputed from the raw per-run metrics."""
    rows = []
    for reps in groups:
        rounds_m, rounds_s = _ms([r.recovery_rounds for r in reps])
        t = reps[0].retrain_rounds
        d_f = [abs(r.forget_acc - r.retrained["forget_acc"]) for r in reps]
        d_s = [abs(r.mia_song_rate - r.retrained["mia_song"]) for r in reps]
        d_y = [abs(r.mia_yeom_rate - r.retrained["mia_yeom"]) for r in reps]
        rows.append({
            "method": reps[0].method,
            "runs": len(reps),
            "rounds_mean": rounds_m, "rounds_std": rounds_s,
            "ce": None if rounds_m is None else t / max(rounds_m, 1),
            "test_acc_mean": _ms([r.test_acc for r in reps])[0],
            "test_acc_std": _ms([r.test_acc for r in reps])[1],
            "forget_acc_mean": _ms([r.forget_acc for r in reps])[0],
            "delta_forget_acc_mean": _ms(d_f)[0], "delta_forget_acc_std": _ms(d_f)[1],
            "mia_song_mean": _ms([r.mia_song_rate for r in reps])[0],
            "delta_mia_song_mean": _ms(d_s)[0], "delta_mia_song_std": _ms(d_s)[1],
            "mia_yeom_mean": _ms([r.mia_yeom_rate for r in reps])[0],
            "delta_mia_yeom_mean": _ms(d_y)[0], "delta_mia_yeom_std": _ms(d_y)[1],
        })
    return rows


def compare(report_paths, out: str | Path | None = None) -> list[dict]:
    """Build the method comparison table; writes ``comparison.csv``/``.json`` if ``out``."""
    if not report_paths:
        raise DomainError("compare needs at least one report")
    by_method: dict[str, list[MetricsReport]] = {}
    for p in report_paths:
        for r in load_reports(p):
            by_method.setdefault(r.method, []).append(r)
    rows = compare_rows(list(by_method.values()))
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "comparison.csv", rows, COMPARE_COLUMNS)
        _write_json(out / "comparison.json", {"columns": list(COMPARE_COLUMNS), "rows": rows})
    return rows
