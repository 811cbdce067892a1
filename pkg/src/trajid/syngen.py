"""Synthetic center-out transport datasets with controllable subject separability.

Each synthetic subject is a :class:`SubjectSignature`: a handful of
kinematic parameters (movement time, arc height, lateral curvature,
tremor, measurement noise) that shape every trial that subject produces.
A trial is a minimum-jerk point-to-point reach from a common start to one
of nine radially arranged targets, with the signature's deflections,
tremor, and noise superimposed.

``separation`` controls how far apart subjects sit in signature space:
0 makes all subjects identical (no signal, classifiers must hit chance),
1 spreads them over the full parameter ranges.  Everything is seeded
through :mod:`trajid.seeding`, so catalogs are bit-reproducible and each
trial can be regenerated in isolation.
"""

import math
import os
from dataclasses import dataclass, fields

import numpy as np

from .errors import DataError
from .ingest import Catalog, N_TARGETS, Trial, write_manifest, write_trial_csv
from .seeding import derive_seed, generator, round_half_up

#: Per-dimension (low, high) ranges the signature grid spans at separation 1.
SIGNATURE_RANGES = {
    "duration_s": (0.6, 1.4),
    "arc_height_m": (0.0, 0.08),
    "lateral_curve_m": (-0.05, 0.05),
    "tremor_amp_m": (0.0, 0.004),
    "tremor_hz": (3.0, 6.0),  # below the 7 Hz low-pass so it survives filtering
    "noise_sigma_m": (0.0005, 0.002),
}

DEFAULT_FS = 250.0


@dataclass(frozen=True)
class SubjectSignature:
    """Kinematic parameters that characterize one synthetic subject."""

    duration_s: float
    arc_height_m: float
    lateral_curve_m: float
    tremor_amp_m: float
    tremor_hz: float
    noise_sigma_m: float

    def __post_init__(self):
        if not self.duration_s > 0:
            raise DataError(f"duration_s must be positive, got {self.duration_s}")
        if not self.tremor_hz > 0:
            raise DataError(f"tremor_hz must be positive, got {self.tremor_hz}")
        for name in ("arc_height_m", "tremor_amp_m", "noise_sigma_m"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be >= 0, got {getattr(self, name)}")


def _exact_cos_deg(angle_deg: float) -> float:
    # cos(radians(90)) is 6.1e-17, not 0; land exactly on axis-aligned targets.
    rem = angle_deg % 360.0
    table = {0.0: 1.0, 90.0: 0.0, 180.0: -1.0, 270.0: 0.0}
    if rem in table:
        return table[rem]
    return math.cos(math.radians(angle_deg))


def _exact_sin_deg(angle_deg: float) -> float:
    return _exact_cos_deg(angle_deg - 90.0)


@dataclass(frozen=True)
class TaskLayout:
    """Start point and the nine target directions.

    Azimuths are degrees in the horizontal plane, measured from +x
    counter-clockwise, and must be strictly decreasing so that index 0 is
    the leftmost target and index 4 (90 deg, the +y axis) points straight
    ahead.
    """

    start: tuple = (0.0, 0.0, 0.0)
    radius_m: float = 0.3
    target_angles_deg: tuple = tuple(180.0 - 22.5 * i for i in range(N_TARGETS))

    def __post_init__(self):
        if len(self.target_angles_deg) != N_TARGETS:
            raise DataError(f"layout needs exactly {N_TARGETS} targets")
        diffs = np.diff(self.target_angles_deg)
        if not np.all(diffs < 0):
            raise DataError("target angles must be strictly decreasing left-to-right")
        if not self.radius_m > 0:
            raise DataError("radius_m must be positive")

    def target_point(self, target_id: int) -> np.ndarray:
        angle = self.target_angles_deg[target_id]
        return np.asarray(self.start, dtype=np.float64) + self.radius_m * np.array(
            [_exact_cos_deg(angle), _exact_sin_deg(angle), 0.0]
        )


DEFAULT_LAYOUT = TaskLayout()


def minimum_jerk_profile(tau):
    """Normalized minimum-jerk displacement 10*tau^3 - 15*tau^4 + 6*tau^5.

    Zero displacement, velocity, and acceleration at tau=0; unit
    displacement with zero velocity and acceleration at tau=1.
    """
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau < 0.0) or np.any(tau > 1.0):
        raise ValueError("tau must lie in [0, 1]")
    return tau**3 * (10.0 - 15.0 * tau + 6.0 * tau**2)


def synth_trial(
    signature: SubjectSignature,
    layout: TaskLayout,
    target_id: int,
    fs: float,
    rng_seed: int,
    participant_id: int = 0,
    trial_id: int = 0,
) -> Trial:
    """Generate one trial from a signature, fully determined by ``rng_seed``.

    The movement is a straight start-to-target reach scaled by the
    minimum-jerk profile, plus a vertical arc ``arc_height_m * sin(pi*tau)``,
    a lateral via-point deflection ``lateral_curve_m * sin(pi*tau)``
    perpendicular to the travel direction (positive = left of travel),
    tremor ``tremor_amp_m * sin(2*pi*tremor_hz*t + phase)`` with an
    independent phase per axis, and i.i.d. Gaussian measurement noise per
    axis.  Sample count is round(duration_s*fs)+1; the normalized time
    grid runs over the sample index so the final sample lands exactly on
    the target when arc/lateral/tremor/noise are zero.
    """
    if not 0 <= target_id < N_TARGETS:
        raise DataError(f"target_id must be in [0, {N_TARGETS - 1}], got {target_id}")
    if not fs > 0:
        raise DataError(f"fs must be positive, got {fs}")
    if not signature.tremor_hz < fs / 2:
        raise DataError("tremor_hz must be below the Nyquist frequency")

    n_samples = round_half_up(signature.duration_s * fs) + 1
    tau = np.arange(n_samples, dtype=np.float64) / (n_samples - 1)
    t = np.arange(n_samples, dtype=np.float64) / fs

    start = np.asarray(layout.start, dtype=np.float64)
    target = layout.target_point(target_id)
    delta = target - start
    horiz = math.hypot(delta[0], delta[1])
    if horiz == 0.0:
        raise DataError("target coincides with start in the horizontal plane")
    # unit vector perpendicular to the travel direction, to the left
    perp = np.array([-delta[1] / horiz, delta[0] / horiz, 0.0])

    profile = minimum_jerk_profile(tau)
    path = start[None, :] + profile[:, None] * delta[None, :]
    bump = np.sin(np.pi * tau)
    path[:, 2] += signature.arc_height_m * bump
    path += signature.lateral_curve_m * bump[:, None] * perp[None, :]

    rng = np.random.Generator(np.random.PCG64(rng_seed))
    # draw order is part of the format: tremor phases first, then noise
    phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
    if signature.tremor_amp_m > 0.0:
        path += signature.tremor_amp_m * np.sin(
            2.0 * np.pi * signature.tremor_hz * t[:, None] + phases[None, :]
        )
    if signature.noise_sigma_m > 0.0:
        path += rng.normal(0.0, signature.noise_sigma_m, size=(n_samples, 3))

    return Trial(participant_id, target_id, trial_id, fs, path)


def make_signatures(n_subjects: int, separation: float, master_seed: int) -> list:
    """Draw per-subject signatures spaced on the parameter-range grid.

    Each dimension gets an equispaced grid of ``n_subjects`` points
    centered on the range midpoint and scaled by ``separation``; subjects
    are assigned grid points through an independent seeded permutation
    per dimension, so no two dimensions are correlated by construction.
    """
    if n_subjects < 2:
        raise DataError(f"need at least 2 subjects, got {n_subjects}")
    if not 0.0 <= separation <= 1.0:
        raise DataError(f"separation must be in [0, 1], got {separation}")
    rng = generator(master_seed, "signatures")
    values = {}
    for name in (f.name for f in fields(SubjectSignature)):
        low, high = SIGNATURE_RANGES[name]
        mid = 0.5 * (low + high)
        grid = np.arange(n_subjects, dtype=np.float64) / (n_subjects - 1) - 0.5
        perm = rng.permutation(n_subjects)
        values[name] = mid + separation * grid[perm] * (high - low)
    return [
        SubjectSignature(**{name: float(values[name][j]) for name in values})
        for j in range(n_subjects)
    ]


def trial_seed(master_seed: int, participant_id: int, target_id: int, trial_id: int) -> int:
    """The per-trial RNG seed: derive_seed(master, "trial", participant, target, trial)."""
    return derive_seed(master_seed, "trial", participant_id, target_id, trial_id)


def synth_catalog(
    n_subjects: int,
    trials_per_target: int,
    separation: float,
    master_seed: int,
    layout: TaskLayout = DEFAULT_LAYOUT,
    fs: float = DEFAULT_FS,
):
    """Generate a full catalog; returns ``(catalog, signatures)``.

    Every subject performs ``trials_per_target`` repetitions of all nine
    targets; within each repetition the target order is a seeded shuffle.
    Each trial's noise stream depends only on
    (master_seed, participant, target, trial), so generation order never
    changes the data.
    """
    if trials_per_target < 1:
        raise DataError("trials_per_target must be >= 1")
    signatures = make_signatures(n_subjects, separation, master_seed)
    trials = []
    for participant in range(n_subjects):
        for rep in range(trials_per_target):
            order = generator(master_seed, "order", participant, rep).permutation(N_TARGETS)
            for target in order:
                trials.append(
                    synth_trial(
                        signatures[participant],
                        layout,
                        int(target),
                        fs,
                        trial_seed(master_seed, participant, int(target), rep),
                        participant_id=participant,
                        trial_id=rep,
                    )
                )
    provenance = (
        f"syngen(seed={master_seed}, subjects={n_subjects}, "
        f"trials_per_target={trials_per_target}, separation={separation})"
    )
    return Catalog(tuple(trials), provenance=provenance), signatures


def export_catalog(catalog: Catalog, signatures, out_dir) -> str:
    """Write trial CSVs, the manifest, and the signature table; returns the manifest path."""
    trials_dir = os.path.join(out_dir, "trials")
    os.makedirs(trials_dir, exist_ok=True)
    entries = []
    for trial in catalog.trials:
        name = f"p{trial.participant_id:03d}_t{trial.target_id}_r{trial.trial_id:03d}.csv"
        write_trial_csv(trial, os.path.join(trials_dir, name))
        entries.append(
            {
                "file": f"trials/{name}",
                "participant": trial.participant_id,
                "target": trial.target_id,
                "trial": trial.trial_id,
                "fs": trial.fs,
            }
        )
    manifest_path = os.path.join(out_dir, "manifest.json")
    write_manifest(entries, manifest_path)
    if signatures is not None:
        sig_names = [f.name for f in fields(SubjectSignature)]
        with open(os.path.join(out_dir, "signatures.csv"), "w", encoding="utf-8") as fh:
            fh.write("participant," + ",".join(sig_names) + "\n")
            for participant, sig in enumerate(signatures):
                row = [str(participant)] + [repr(float(getattr(sig, n))) for n in sig_names]
                fh.write(",".join(row) + "\n")
    return manifest_path
