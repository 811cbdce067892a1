"""Preprocessing chain: Butterworth low-pass, z-score normalization, windowing.

The filter is designed from the analog Butterworth prototype: poles at
equal angular spacing on the left half of the circle of radius
``omega_c = 2*fs*tan(pi*cutoff/fs)`` (the prewarped cutoff), mapped to
the z-plane with the bilinear transform and realized as a cascade of
biquads.  Prewarping makes the -3 dB point land exactly on the requested
cutoff frequency.

Normalization uses per-channel population statistics; in a
cross-validation run those stats must come from the training trials of
the fold only (the harness enforces this), never from validation or test
data.
"""

import cmath
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .ingest import Catalog, Trial

CAUSAL = "causal"
ZERO_PHASE = "zero-phase"

#: fold_tag value for window sets not tied to any fold.
NO_FOLD = 0xFFFFFFFF

_WINDOW_MAGIC = b"TJW1"


@dataclass(frozen=True)
class FilterSpec:
    """Design parameters of the low-pass filter."""

    order: int = 4
    cutoff_hz: float = 7.0
    fs_hz: float = 250.0
    mode: str = ZERO_PHASE

    def __post_init__(self):
        if self.order < 2 or self.order % 2 != 0:
            raise DataError(f"filter order must be even and >= 2, got {self.order}")
        if not 0 < self.cutoff_hz < self.fs_hz / 2:
            raise DataError(
                f"cutoff must lie in (0, fs/2) = (0, {self.fs_hz / 2}), got {self.cutoff_hz}"
            )
        if self.mode not in (CAUSAL, ZERO_PHASE):
            raise DataError(f"mode must be '{CAUSAL}' or '{ZERO_PHASE}', got {self.mode!r}")


@dataclass(frozen=True)
class Biquad:
    """One second-order section; the a0 coefficient is normalized to 1."""

    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    def poles(self):
        disc = cmath.sqrt(complex(self.a1 * self.a1 - 4.0 * self.a2))
        return ((-self.a1 + disc) / 2.0, (-self.a1 - disc) / 2.0)


@dataclass(frozen=True)
class SosChain:
    """A cascade of biquads with an overall gain factor."""

    sections: tuple
    overall_gain: float = 1.0

    @property
    def order(self) -> int:
        return 2 * len(self.sections)

    def is_stable(self) -> bool:
        return all(abs(p) < 1.0 for sec in self.sections for p in sec.poles())


def prewarped_cutoff(spec: FilterSpec) -> float:
    """Analog cutoff (rad/s) after bilinear prewarping: 2*fs*tan(pi*fc/fs)."""
    return 2.0 * spec.fs_hz * math.tan(math.pi * spec.cutoff_hz / spec.fs_hz)


def design_butterworth(spec: FilterSpec) -> SosChain:
    """Design the digital low-pass as order/2 biquads.

    Conjugate analog pole pairs give sections
    ``omega_c^2 / (s^2 + 2*sin(psi_k)*omega_c*s + omega_c^2)`` with
    ``psi_k = (2k+1)*pi/(2*order)``; each is mapped by
    ``s = 2*fs*(1 - z^-1)/(1 + z^-1)``.
    """
    omega_c = prewarped_cutoff(spec)
    k_bt = 2.0 * spec.fs_hz
    sections = []
    for k in range(spec.order // 2):
        psi = (2 * k + 1) * math.pi / (2 * spec.order)
        a_coeff = 2.0 * math.sin(psi) * omega_c
        d0 = k_bt * k_bt + a_coeff * k_bt + omega_c * omega_c
        d1 = 2.0 * (omega_c * omega_c - k_bt * k_bt)
        d2 = k_bt * k_bt - a_coeff * k_bt + omega_c * omega_c
        b0 = omega_c * omega_c / d0
        sections.append(Biquad(b0, 2.0 * b0, b0, d1 / d0, d2 / d0))
    return SosChain(tuple(sections), overall_gain=1.0)


def evaluate_response(chain: SosChain, f_hz: float, fs_hz: float) -> complex:
    """Complex gain of the cascade at frequency ``f_hz``."""
    if not 0 <= f_hz <= fs_hz / 2:
        raise DataError(f"frequency must lie in [0, fs/2], got {f_hz}")
    z_inv = cmath.exp(-2j * math.pi * f_hz / fs_hz)
    gain = complex(chain.overall_gain)
    for sec in chain.sections:
        num = sec.b0 + sec.b1 * z_inv + sec.b2 * z_inv * z_inv
        den = 1.0 + sec.a1 * z_inv + sec.a2 * z_inv * z_inv
        gain *= num / den
    return gain


def _filter_forward(chain: SosChain, x: np.ndarray) -> np.ndarray:
    """Causal cascade, direct-form II transposed, zero initial state."""
    y = np.array(x, dtype=np.float64)
    for sec in chain.sections:
        b0, b1, b2, a1, a2 = sec.b0, sec.b1, sec.b2, sec.a1, sec.a2
        s1 = 0.0
        s2 = 0.0
        out = y
        for i in range(out.shape[0]):
            xi = out[i]
            yi = b0 * xi + s1
            s1 = b1 * xi - a1 * yi + s2
            s2 = b2 * xi - a2 * yi
            out[i] = yi
    if chain.overall_gain != 1.0:
        y *= chain.overall_gain
    return y


def filter_signal(chain: SosChain, x, mode: str = ZERO_PHASE) -> np.ndarray:
    """Filter one channel; zero-phase mode runs forward then backward.

    Zero-phase edge handling: the signal is extended at both ends by
    point reflection about the end samples (length 3*order, clamped to
    T-1 for short signals), filtered in both directions, and cropped.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError(f"filter_signal expects a 1-D channel, got shape {x.shape}")
    if mode == CAUSAL:
        return _filter_forward(chain, x)
    if mode != ZERO_PHASE:
        raise DataError(f"unknown filter mode {mode!r}")
    n = x.shape[0]
    order = chain.order
    if n < order + 1:
        raise DataError(f"zero-phase filtering needs at least {order + 1} samples, got {n}")
    pad = min(3 * order, n - 1)
    left = 2.0 * x[0] - x[pad:0:-1]
    right = 2.0 * x[-1] - x[-2 : -pad - 2 : -1]
    ext = np.concatenate([left, x, right])
    ext = _filter_forward(chain, ext)
    ext = _filter_forward(chain, ext[::-1])[::-1]
    return ext[pad : pad + n]


def filter_trial(chain: SosChain, trial: Trial, mode: str = ZERO_PHASE) -> Trial:
    """Filter each position channel independently; length is unchanged."""
    if not chain.is_stable():
        raise DataError("refusing to filter with an unstable chain")
    filtered = np.column_stack(
        [filter_signal(chain, trial.samples[:, c], mode) for c in range(3)]
    )
    return trial.with_samples(filtered)


@dataclass(frozen=True)
class NormStats:
    """Per-channel mean/std (population convention) with provenance."""

    mean: np.ndarray
    std: np.ndarray
    guard_eps: float
    source: str = ""

    def apply(self, samples: np.ndarray) -> np.ndarray:
        return (samples - self.mean) / self.std


def compute_norm_stats(trials, guard_eps: float = 1e-8, source: str = "") -> NormStats:
    """Pool all samples of the given trials; population std, guarded below.

    Accumulation order is fixed (trials in the given order, samples in
    time order) so results are reproducible.
    """
    arrays = [t.samples for t in trials]
    if not arrays or sum(a.shape[0] for a in arrays) == 0:
        raise DataError("compute_norm_stats needs at least one sample")
    pooled = np.concatenate(arrays, axis=0)
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)  # population (ddof=0)
    std = np.where(std < guard_eps, guard_eps, std)
    mean.flags.writeable = False
    std.flags.writeable = False
    return NormStats(mean, std, guard_eps, source)


def window_samples(samples: np.ndarray, window: int) -> np.ndarray:
    """Cut (T, C) samples into floor(T/window) non-overlapping (C, window) blocks.

    Windows start at sample 0; the trailing T mod window samples are
    dropped.  T < window yields zero windows.
    """
    if window < 1:
        raise DataError(f"window length must be >= 1, got {window}")
    n_samples, n_channels = samples.shape
    count = n_samples // window
    clipped = samples[: count * window]
    # (count, window, C) -> (count, C, window)
    return clipped.reshape(count, window, n_channels).transpose(0, 2, 1)


def window_trial(trial: Trial, window: int) -> np.ndarray:
    return window_samples(trial.samples, window)


class WindowSet:
    """Fixed-length labeled windows ready for training.

    ``windows`` is (N, C, W) float32; label arrays run parallel to it.
    ``fold_tag`` records which fold's training stats normalized the data
    (NO_FOLD when stats were global).
    """

    def __init__(self, windows, participant_ids, target_ids, trial_ids,
                 norm_stats=None, fold_tag=NO_FOLD):
        self.windows = np.ascontiguousarray(windows, dtype=np.float32)
        self.participant_ids = np.asarray(participant_ids, dtype=np.int64)
        self.target_ids = np.asarray(target_ids, dtype=np.int64)
        self.trial_ids = np.asarray(trial_ids, dtype=np.int64)
        self.norm_stats = norm_stats
        self.fold_tag = fold_tag
        n = self.windows.shape[0]
        if not (len(self.participant_ids) == len(self.target_ids) == len(self.trial_ids) == n):
            raise DataError("window/label length mismatch")

    def __len__(self):
        return self.windows.shape[0]

    @property
    def shape(self):
        return self.windows.shape


def _empty_window_set(window: int, norm_stats, fold_tag) -> WindowSet:
    return WindowSet(
        np.zeros((0, 3, window), dtype=np.float32), [], [], [],
        norm_stats=norm_stats, fold_tag=fold_tag,
    )


def preprocess(
    catalog_or_trials,
    spec: FilterSpec,
    window: int,
    stats_source,
    fold_tag: int = NO_FOLD,
    prefiltered: bool = False,
) -> WindowSet:
    """Filter -> z-score -> window, in that order, for every trial.

    ``stats_source`` is either a ready :class:`NormStats` or a sequence
    of trials whose filtered samples define the statistics (pass the
    training trials of the fold).  ``prefiltered=True`` skips filtering
    (for callers that cache filtered trials).
    """
    trials = catalog_or_trials.trials if isinstance(catalog_or_trials, Catalog) else list(catalog_or_trials)
    chain = design_butterworth(spec)
    if prefiltered:
        filtered = list(trials)
    else:
        filtered = [filter_trial(chain, t, spec.mode) for t in trials]
    if isinstance(stats_source, NormStats):
        stats = stats_source
    else:
        stat_trials = list(stats_source)
        if not prefiltered:
            stat_trials = [filter_trial(chain, t, spec.mode) for t in stat_trials]
        stats = compute_norm_stats(stat_trials, source="preprocess")
    if not filtered:
        return _empty_window_set(window, stats, fold_tag)
    blocks = []
    participants, targets, trial_ids = [], [], []
    for trial in filtered:
        wins = window_samples(stats.apply(trial.samples), window)
        if wins.shape[0] == 0:
            continue
        blocks.append(wins.astype(np.float32))
        participants.extend([trial.participant_id] * wins.shape[0])
        targets.extend([trial.target_id] * wins.shape[0])
        trial_ids.extend([trial.trial_id] * wins.shape[0])
    if not blocks:
        return _empty_window_set(window, stats, fold_tag)
    return WindowSet(
        np.concatenate(blocks, axis=0), participants, targets, trial_ids,
        norm_stats=stats, fold_tag=fold_tag,
    )


def write_windows(ws: WindowSet, path) -> None:
    """Binary layout: magic TJW1; u32 N, C, W, fold_tag; N u16 label
    triples (participant, target, trial); then N*C*W float32 samples.
    All little-endian, samples window-major, channel-second, time-last."""
    n, c, w = ws.windows.shape
    labels = np.stack([ws.participant_ids, ws.target_ids, ws.trial_ids], axis=1)
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
        raise DataError("labels do not fit in u16")
    with open(path, "wb") as fh:
        fh.write(_WINDOW_MAGIC)
        fh.write(struct.pack("<4I", n, c, w, ws.fold_tag))
        fh.write(labels.astype("<u2").tobytes())
        fh.write(ws.windows.astype("<f4", copy=False).tobytes())


def read_windows(path) -> WindowSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _WINDOW_MAGIC:
        raise DataError(f"{path}: not a window-set file (bad magic)")
    n, c, w, fold_tag = struct.unpack_from("<4I", blob, 4)
    offset = 4 + 16
    labels_bytes = n * 3 * 2
    samples_bytes = n * c * w * 4
    if len(blob) != offset + labels_bytes + samples_bytes:
        raise DataError(f"{path}: truncated window-set file")
    labels = np.frombuffer(blob, dtype="<u2", count=n * 3, offset=offset).reshape(n, 3)
    samples = np.frombuffer(
        blob, dtype="<f4", count=n * c * w, offset=offset + labels_bytes
    ).reshape(n, c, w)
    return WindowSet(
        samples, labels[:, 0].astype(np.int64), labels[:, 1].astype(np.int64),
        labels[:, 2].astype(np.int64), fold_tag=fold_tag,
    )
