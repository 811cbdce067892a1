"""Cross-validation protocol: fold planning, training, and run reporting.

The protocol is stratified by participant throughout.  Each participant's
trials are shuffled with a seeded per-participant stream and dealt
round-robin into k test buckets; fold f tests on bucket f and splits the
remainder 80/20 into train/val with the same dealing scheme.  Training
normalization statistics always come from the fold's training data only.

Split granularity defaults to whole trials, which is the leak-free
reading of the protocol.  ``leakage="window"`` instead deals individual
windows into the splits, so sibling windows of one trial can land on
both sides of the fence — useful for quantifying how much that inflates
accuracy, not for reporting.
"""

import dataclasses
import json
import logging
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .dsp import FilterSpec, NormStats, design_butterworth, filter_trial, preprocess, window_samples
from .errors import DataError, DivergenceError
from .ingest import Catalog
from .metrics import (
    FoldReport,
    RunSummary,
    aggregate,
    confusion_matrix,
    majority_vote,
    per_target_accuracy,
)
from .model import ModelConfig, build, forward, save_model
from .seeding import derive_seed, generator, round_half_up

log = logging.getLogger(__name__)

TRIAL_LEVEL = "trial"
WINDOW_LEVEL = "window"

_EVAL_CHUNK = 2048


def select_equidistant(n_total: int, n_select: int) -> list:
    """Equally spaced participant ids over [0, n_total-1], rounded half up."""
    if n_select < 2 or n_select > n_total:
        raise DataError(f"need 2 <= n_select <= n_total, got {n_select} of {n_total}")
    ids = [round_half_up(i * (n_total - 1) / (n_select - 1)) for i in range(n_select)]
    if len(set(ids)) != len(ids):
        raise DataError(f"equidistant selection collides after rounding: {ids}")
    return ids


@dataclass(frozen=True)
class SplitPlan:
    """Trial-key lists for one fold, plus a per-participant count ledger."""

    fold_id: int
    train: tuple  # trial keys (participant_id, target_id, trial_id)
    val: tuple
    test: tuple
    ledger: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        splits = (set(self.train), set(self.val), set(self.test))
        total = len(self.train) + len(self.val) + len(self.test)
        if len(splits[0] | splits[1] | splits[2]) != total:
            raise DataError(f"fold {self.fold_id}: splits overlap or repeat trials")

    @property
    def all_keys(self) -> tuple:
        return self.train + self.val + self.test


def _deal(items, k: int, fold: int):
    """Round-robin split: bucket ``fold`` vs the rest, preserving order."""
    picked = [it for j, it in enumerate(items) if j % k == fold % k]
    rest = [it for j, it in enumerate(items) if j % k != fold % k]
    return picked, rest


def make_folds(catalog: Catalog, k: int = 10, seed: int = 0) -> list:
    """k stratified fold plans; deterministic in (catalog order, seed)."""
    if k < 2:
        raise DataError(f"need at least 2 folds, got {k}")
    by_participant = {}
    for trial in catalog.trials:
        by_participant.setdefault(trial.participant_id, []).append(trial.key)
    if not by_participant:
        raise DataError("cannot plan folds over an empty catalog")
    shuffled = {}
    for pid in sorted(by_participant):
        keys = sorted(by_participant[pid])
        if len(keys) < k:
            raise DataError(
                f"participant {pid} has only {len(keys)} trials; {k}-fold CV needs >= {k}"
            )
        perm = generator(seed, "folds", pid).permutation(len(keys))
        shuffled[pid] = [keys[i] for i in perm]
    plans = []
    for fold in range(k):
        train, val, test = [], [], []
        ledger = {}
        for pid, keys in shuffled.items():
            picked, rest = _deal(keys, k, fold)
            # same dealing scheme for the 80/20 remainder split
            val_part, train_part = _deal(rest, 5, fold)
            test.extend(picked)
            val.extend(val_part)
            train.extend(train_part)
            ledger[pid] = {"train": len(train_part), "val": len(val_part), "test": len(picked)}
        plans.append(SplitPlan(fold, tuple(train), tuple(val), tuple(test), ledger))
    return plans


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a cross-validation run."""

    epochs: int = 100
    batch_size: int = 64
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9  # sgd only
    beta1: float = 0.9  # adam only
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    window: int = 7
    filter_spec: FilterSpec = field(default_factory=FilterSpec)
    width_mult: float = 0.25
    folds: int = 10
    subset: tuple = None  # participant ids; None keeps the whole catalog
    leakage: str = TRIAL_LEVEL
    jobs: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise DataError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise DataError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("adam", "sgd"):
            raise DataError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.folds < 2:
            raise DataError(f"folds must be >= 2, got {self.folds}")
        if self.leakage not in (TRIAL_LEVEL, WINDOW_LEVEL):
            raise DataError(
                f"leakage must be '{TRIAL_LEVEL}' or '{WINDOW_LEVEL}', got {self.leakage!r}"
            )
        if self.jobs < 1:
            raise DataError(f"jobs must be >= 1, got {self.jobs}")
        if self.subset is not None:
            object.__setattr__(self, "subset", tuple(int(p) for p in self.subset))

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["subset"] = list(self.subset) if self.subset is not None else None
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        spec = data.get("filter_spec")
        if isinstance(spec, dict):
            data["filter_spec"] = FilterSpec(**spec)
        if data.get("subset") is not None:
            data["subset"] = tuple(data["subset"])
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise DataError(f"unknown run-config fields: {sorted(unknown)}")
        return cls(**data)


def _class_map(catalog: Catalog) -> dict:
    return {pid: idx for idx, pid in enumerate(catalog.participants)}


def _filter_catalog(catalog: Catalog, spec: FilterSpec) -> dict:
    """key -> filtered trial; done once per run, folds reuse the cache."""
    chain = design_butterworth(spec)
    return {t.key: filter_trial(chain, t, spec.mode) for t in catalog.trials}


def _trial_level_sets(plan, config, filtered):
    spec, window = config.filter_spec, config.window
    split_trials = {
        name: [filtered[k] for k in sorted(getattr(plan, name))]
        for name in ("train", "val", "test")
    }
    train_ws = preprocess(split_trials["train"], spec, window,
                          split_trials["train"], fold_tag=plan.fold_id, prefiltered=True)
    stats = train_ws.norm_stats
    val_ws = preprocess(split_trials["val"], spec, window, stats,
                        fold_tag=plan.fold_id, prefiltered=True)
    test_ws = preprocess(split_trials["test"], spec, window, stats,
                         fold_tag=plan.fold_id, prefiltered=True)
    return train_ws, val_ws, test_ws


def _window_level_sets(plan, config, filtered):
    """Deal individual windows (not trials) into the splits of this fold."""
    from .dsp import WindowSet

    blocks, pids, tids, trs = [], [], [], []
    for key in sorted(plan.all_keys):
        trial = filtered[key]
        wins = window_samples(trial.samples, config.window)
        if wins.shape[0] == 0:
            continue
        blocks.append(wins)
        pids.extend([trial.participant_id] * wins.shape[0])
        tids.extend([trial.target_id] * wins.shape[0])
        trs.extend([trial.trial_id] * wins.shape[0])
    if not blocks:
        raise DataError(f"fold {plan.fold_id}: no windows at all")
    windows = np.concatenate(blocks, axis=0)
    pids, tids, trs = (np.asarray(a, dtype=np.int64) for a in (pids, tids, trs))

    idx = {"train": [], "val": [], "test": []}
    for pid in np.unique(pids):
        mine = np.flatnonzero(pids == pid)
        perm = generator(config.seed, "wsplit", plan.fold_id, int(pid)).permutation(mine.size)
        mine = mine[perm]
        picked, rest = _deal(list(mine), config.folds, plan.fold_id)
        val_part, train_part = _deal(rest, 5, plan.fold_id)
        idx["test"].extend(picked)
        idx["val"].extend(val_part)
        idx["train"].extend(train_part)

    train_idx = np.asarray(sorted(idx["train"]), dtype=np.int64)
    if train_idx.size == 0:
        raise DataError(f"fold {plan.fold_id}: window-level split left no training windows")
    mean = windows[train_idx].mean(axis=(0, 2))
    std = windows[train_idx].std(axis=(0, 2))
    std = np.where(std < 1e-8, 1e-8, std)
    stats = NormStats(mean, std, 1e-8, source=f"fold {plan.fold_id} train windows")

    out = []
    for name in ("train", "val", "test"):
        sel = np.asarray(sorted(idx[name]), dtype=np.int64)
        normed = (windows[sel] - mean[None, :, None]) / std[None, :, None]
        out.append(WindowSet(normed, pids[sel], tids[sel], trs[sel],
                             norm_stats=stats, fold_tag=plan.fold_id))
    return tuple(out)


def _predict(store, windows: np.ndarray) -> np.ndarray:
    preds = []
    for start in range(0, windows.shape[0], _EVAL_CHUNK):
        logits = forward(store, windows[start : start + _EVAL_CHUNK], train=False)
        preds.append(np.argmax(logits.values, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def _make_optimizer(config: RunConfig, store):
    if config.optimizer == "adam":
        return ad.Adam(store.flat_values, store.flat_grads, lr=config.lr,
                       beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
    return ad.MomentumSGD(store.flat_values, store.flat_grads,
                          lr=config.lr, momentum=config.momentum)


def train_fold(plan: SplitPlan, config: RunConfig, catalog: Catalog, filtered=None):
    """Train one fold; returns (FoldReport, ParamStore at the best epoch)."""
    class_map = _class_map(catalog)
    n_classes = len(class_map)
    if n_classes < 2:
        raise DataError(f"need at least 2 participants, got {n_classes}")
    n_targets = max(t.target_id for t in catalog.trials) + 1
    if filtered is None:
        filtered = _filter_catalog(catalog, config.filter_spec)
    missing = [k for k in plan.all_keys if k not in filtered]
    if missing:
        raise DataError(f"fold {plan.fold_id}: plan references unknown trials {missing[:3]}")

    if config.leakage == WINDOW_LEVEL:
        train_ws, val_ws, test_ws = _window_level_sets(plan, config, filtered)
    else:
        train_ws, val_ws, test_ws = _trial_level_sets(plan, config, filtered)
    if len(train_ws) == 0 or len(test_ws) == 0:
        raise DataError(f"fold {plan.fold_id}: empty train or test window set")

    remap = np.vectorize(class_map.__getitem__, otypes=[np.int64])
    x_train, y_train = train_ws.windows, remap(train_ws.participant_ids)
    x_val, y_val = val_ws.windows, remap(val_ws.participant_ids)
    x_test, y_test = test_ws.windows, remap(test_ws.participant_ids)

    model_cfg = ModelConfig(n_classes=n_classes, in_channels=x_train.shape[1],
                            input_length=config.window, width_mult=config.width_mult)
    store = build(model_cfg, seed=derive_seed(config.seed, "init", plan.fold_id))
    opt = _make_optimizer(config, store)

    n = x_train.shape[0]
    best = (-1.0, 0, None)  # (val accuracy, epoch, snapshot); strict > keeps earlier ties
    train_curve, val_curve = [], []
    for epoch in range(1, config.epochs + 1):
        order = generator(config.seed, "epoch", plan.fold_id, epoch).permutation(n)
        loss_sum = 0.0
        try:
            for start in range(0, n, config.batch_size):
                sel = order[start : start + config.batch_size]
                store.zero_grads()
                tape = ad.Tape()
                logits = forward(store, x_train[sel], train=True, tape=tape)
                loss = ad.softmax_cross_entropy(tape, logits, y_train[sel])
                if not np.isfinite(loss.values):
                    raise DivergenceError("non-finite training loss")
                ad.backward(tape, loss)
                opt.step()
                loss_sum += float(loss.values) * sel.size
        except DivergenceError as exc:
            raise DivergenceError(
                f"fold {plan.fold_id} diverged at epoch {epoch}: {exc}",
                fold_id=plan.fold_id, epoch=epoch,
            ) from None
        train_curve.append(loss_sum / n)
        if len(val_ws):
            val_acc = float(np.mean(_predict(store, x_val) == y_val))
        else:
            val_acc = 0.0
        val_curve.append(val_acc)
        if val_acc > best[0]:
            best = (val_acc, epoch, store.snapshot())
        log.debug("fold %d epoch %d: loss %.4f val %.4f", plan.fold_id, epoch,
                  train_curve[-1], val_acc)

    store.restore(best[2])
    preds = _predict(store, x_test)
    hits = preds == y_test

    # trial-level accuracy: majority vote over each test trial's windows
    trial_keys = np.stack([test_ws.participant_ids, test_ws.target_ids,
                           test_ws.trial_ids], axis=1)
    votes_ok = []
    for key in np.unique(trial_keys, axis=0):
        mask = np.all(trial_keys == key, axis=1)
        vote = majority_vote(preds[mask])
        votes_ok.append(vote == class_map[int(key[0])])

    report = FoldReport(
        fold_id=plan.fold_id,
        best_epoch=best[1],
        window_accuracy=float(hits.mean()),
        trial_accuracy=float(np.mean(votes_ok)),
        per_target=per_target_accuracy(test_ws.target_ids, hits, n_targets),
        confusion=confusion_matrix(preds, y_test, n_classes).tolist(),
        train_loss=train_curve,
        val_accuracy=val_curve,
        n_test_windows=len(test_ws),
        n_test_trials=len(votes_ok),
    )
    return report, store


def _environment_stamp() -> dict:
    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
    }


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_summary_csv(path: Path, reports) -> None:
    lines = ["fold_id,best_epoch,window_accuracy,trial_accuracy,n_test_windows,n_test_trials"]
    for r in reports:
        lines.append(",".join([
            str(r.fold_id), str(r.best_epoch),
            repr(float(r.window_accuracy)), repr(float(r.trial_accuracy)),
            str(r.n_test_windows), str(r.n_test_trials),
        ]))
    path.write_text("\n".join(lines) + "\n")


def _write_confusion_csv(path: Path, summary: RunSummary, participants) -> None:
    header = ["kind", "label"] + [str(p) for p in participants]
    lines = [",".join(header)]
    for kind, matrix in (("count", summary.confusion), ("percent", summary.confusion_percent)):
        for pid, row in zip(participants, matrix):
            lines.append(",".join([kind, str(pid)] + [str(int(c)) for c in row]))
    path.write_text("\n".join(lines) + "\n")


def _write_per_target_csv(path: Path, reports) -> None:
    lines = ["fold_id,target_id,accuracy"]
    for r in reports:
        for target, acc in enumerate(r.per_target):
            cell = repr(float(acc)) if acc is not None else ""
            lines.append(f"{r.fold_id},{target},{cell}")
    path.write_text("\n".join(lines) + "\n")


def run_experiment(catalog: Catalog, config: RunConfig, out_dir) -> RunSummary:
    """Full cross-validation run; writes the run directory, returns the summary.

    Layout: run.json, fold_<k>/model.bin, fold_<k>/report.json,
    summary.json, summary.csv, confusion.csv, per_target.csv.
    """
    if config.subset is not None:
        catalog = catalog.subset(config.subset)
    if len(catalog) == 0:
        raise DataError("cannot run an experiment on an empty catalog")
    participants = catalog.participants
    if len(participants) < 2:
        raise DataError(f"need at least 2 participants, got {len(participants)}")
    if config.jobs != 1:
        log.info("jobs=%d requested; folds run sequentially in this implementation",
                 config.jobs)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plans = make_folds(catalog, k=config.folds, seed=config.seed)
    _write_json(out / "run.json", {
        "config": config.to_dict(),
        "participants": list(participants),
        "n_targets": max(t.target_id for t in catalog.trials) + 1,
        "n_trials": len(catalog),
        "environment": _environment_stamp(),
    })

    filtered = _filter_catalog(catalog, config.filter_spec)
    reports = []
    started = time.monotonic()
    for plan in plans:
        fold_start = time.monotonic()
        report, store = train_fold(plan, config, catalog, filtered=filtered)
        fold_dir = out / f"fold_{plan.fold_id}"
        fold_dir.mkdir(exist_ok=True)
        save_model(store, fold_dir / "model.bin")
        _write_json(fold_dir / "report.json", report.to_dict())
        reports.append(report)
        log.info("fold %d: window %.4f trial %.4f (best epoch %d) in %.1fs",
                 plan.fold_id, report.window_accuracy, report.trial_accuracy,
                 report.best_epoch, time.monotonic() - fold_start)

    summary = aggregate(reports)
    _write_json(out / "summary.json", summary.to_dict())
    _write_summary_csv(out / "summary.csv", reports)
    _write_confusion_csv(out / "confusion.csv", summary, participants)
    _write_per_target_csv(out / "per_target.csv", reports)
    log.info("run complete: mean window accuracy %.4f over %d folds in %.1fs",
             summary.window_accuracy["mean"], len(reports), time.monotonic() - started)
    return summary
