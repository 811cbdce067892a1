"""Loading and validation of trial data.

Interchange format
------------------
A dataset is a directory with a JSON manifest plus one CSV file per
trial.  The manifest is a JSON array of objects::

    [{"file": "trials/p000_t4_r000.csv",
      "participant": 0, "target": 4, "trial": 0, "fs": 250.0}, ...]

with file paths relative to the manifest's directory.  Each trial CSV is
UTF-8 with header ``t,x,y,z`` and one sample per row; ``t`` is seconds,
positions are meters.  Values are written with Python's shortest
round-trip float formatting, so write -> read is bit-exact.
"""

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

#: Maximum tolerated deviation of timestamp spacing from 1/fs, in seconds.
SPACING_TOL_S = 1e-6

N_TARGETS = 9


@dataclass(frozen=True)
class Trial:
    """One recorded transport movement.

    ``samples`` is a (T, 3) float64 array of x/y/z positions in meters,
    sampled uniformly at ``fs`` Hz.  Instances are validated on
    construction; an invalid Trial cannot exist.
    """

    participant_id: int
    target_id: int
    trial_id: int
    fs: float
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[1] != 3:
            raise DataError(f"trial samples must be (T, 3), got {samples.shape}")
        if samples.shape[0] < 2:
            raise DataError(f"trial needs at least 2 samples, got {samples.shape[0]}")
        if not np.all(np.isfinite(samples)):
            raise DataError("trial contains non-finite samples")
        if not self.fs > 0:
            raise DataError(f"sampling rate must be positive, got {self.fs}")
        if not 0 <= self.target_id < N_TARGETS:
            raise DataError(f"target_id must be in [0, {N_TARGETS - 1}], got {self.target_id}")
        if self.participant_id < 0:
            raise DataError(f"participant_id must be >= 0, got {self.participant_id}")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def key(self) -> tuple:
        return (self.participant_id, self.target_id, self.trial_id)

    def with_samples(self, samples) -> "Trial":
        """Copy of this trial with the same identity but new samples."""
        return Trial(self.participant_id, self.target_id, self.trial_id, self.fs, samples)


@dataclass(frozen=True)
class Catalog:
    """An immutable collection of trials sharing one sampling rate."""

    trials: tuple
    provenance: str = ""

    def __post_init__(self):
        trials = tuple(self.trials)
        seen = set()
        for trial in trials:
            if trial.key in seen:
                raise DataError(f"duplicate trial key {trial.key}")
            seen.add(trial.key)
        rates = {trial.fs for trial in trials}
        if len(rates) > 1:
            raise DataError(f"inconsistent sampling rates in catalog: {sorted(rates)}")
        object.__setattr__(self, "trials", trials)

    @property
    def participants(self) -> tuple:
        return tuple(sorted({t.participant_id for t in self.trials}))

    @property
    def n_participants(self) -> int:
        """Declared participant count (max id + 1)."""
        return max((t.participant_id for t in self.trials), default=-1) + 1

    @property
    def fs(self) -> float:
        if not self.trials:
            raise DataError("empty catalog has no sampling rate")
        return self.trials[0].fs

    def __len__(self):
        return len(self.trials)

    def subset(self, participant_ids) -> "Catalog":
        keep = set(participant_ids)
        missing = keep - set(self.participants)
        if missing:
            raise DataError(f"participants not in catalog: {sorted(missing)}")
        return Catalog(
            tuple(t for t in self.trials if t.participant_id in keep),
            provenance=self.provenance,
        )


def validate_trial(raw_rows, participant_id, target_id, trial_id, fs) -> Trial:
    """Check parsed ``t,x,y,z`` rows and build a Trial.

    Timestamps must increase with uniform spacing 1/fs within
    ``SPACING_TOL_S``; the time column is then dropped (it is fully
    determined by fs).
    """
    rows = np.asarray(raw_rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != 4:
        raise DataError(f"expected rows of t,x,y,z, got shape {rows.shape}")
    if rows.shape[0] < 2:
        raise DataError(f"trial needs at least 2 rows, got {rows.shape[0]}")
    if not np.all(np.isfinite(rows)):
        raise DataError("non-finite value in trial rows")
    spacing = np.diff(rows[:, 0])
    if np.any(spacing <= 0):
        raise DataError("non-monotonic timestamps")
    if np.max(np.abs(spacing - 1.0 / fs)) > SPACING_TOL_S:
        raise DataError(
            f"non-uniform sampling: spacing deviates from 1/{fs} s "
            f"by more than {SPACING_TOL_S} s"
        )
    return Trial(participant_id, target_id, trial_id, fs, rows[:, 1:])


def read_trial_csv(path) -> np.ndarray:
    """Read one trial CSV into a (T, 4) array of t,x,y,z."""
    if not os.path.isfile(path):
        raise DataError(f"missing trial file: {path}")
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t", "x", "y", "z"]:
            raise DataError(f"{path}: expected header t,x,y,z, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: malformed number: {exc}") from None
    if len(rows) < 2:
        raise DataError(f"{path}: trial needs at least 2 rows, got {len(rows)}")
    return np.asarray(rows, dtype=np.float64)


def write_trial_csv(trial: Trial, path) -> None:
    """Write one trial as CSV; floats use shortest round-trip formatting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "z"])
        for i in range(trial.n_samples):
            t = i / trial.fs
            x, y, z = trial.samples[i]
            # repr of a *python* float is the shortest round-trip form
            writer.writerow([repr(float(t)), repr(float(x)), repr(float(y)), repr(float(z))])


def write_manifest(entries, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(entries, fh, indent=2)
        fh.write("\n")


def load_catalog(manifest_path, provenance=None) -> Catalog:
    """Load and validate a dataset from its manifest.

    Every referenced CSV is parsed and every invariant enforced; no
    Catalog containing an invalid trial is ever returned.
    """
    if not os.path.isfile(manifest_path):
        raise DataError(f"missing manifest: {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        try:
            entries = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{manifest_path}: invalid JSON: {exc}") from None
    if not isinstance(entries, list):
        raise DataError(f"{manifest_path}: manifest must be a JSON array")
    base = os.path.dirname(os.path.abspath(manifest_path))
    trials = []
    for i, entry in enumerate(entries):
        try:
            rel = entry["file"]
            participant = int(entry["participant"])
            target = int(entry["target"])
            trial_id = int(entry["trial"])
            fs = float(entry["fs"])
        except (TypeError, KeyError) as exc:
            raise DataError(f"{manifest_path}: entry {i} missing key {exc}") from None
        if not math.isfinite(fs):
            raise DataError(f"{manifest_path}: entry {i} has non-finite fs")
        rows = read_trial_csv(os.path.join(base, rel))
        trials.append(validate_trial(rows, participant, target, trial_id, fs))
    if provenance is None:
        provenance = f"manifest:{os.path.abspath(manifest_path)}"
    return Catalog(tuple(trials), provenance=provenance)
