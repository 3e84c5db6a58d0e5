"""Objective metrics: DTW-aligned spectral/prosodic distances and intensity banding.

All DTW variants minimize the total local cost over monotone paths with
unit steps and report per-aligned-pair averages (total cost / path length).
"""
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.fft import dct

from . import kernels
from .errors import AlignmentMismatch, EmptyInput, InsufficientData

MCD_COEFFS = 13
MCD_SCALE = 10.0 / np.log(10.0) * np.sqrt(2.0)
BANDS = ("slight", "average", "strong")
BAND_EDGES = (0.35, 0.65)
FINE_LEVELS = np.round(np.arange(1, 10) / 10.0, 1)


def dtw(cost):
    """``(mean aligned cost, path)`` for a [n, m] local-cost matrix."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or 0 in cost.shape:
        raise EmptyInput("DTW needs two non-empty sequences")
    total, pi, pj = kernels.dtw_path(cost)
    return total / len(pi), (np.asarray(pi), np.asarray(pj))


def mel_cepstrum(mel, n_coeffs=MCD_COEFFS):
    """Orthonormal DCT-II of log-mel frames, coefficients 1..n_coeffs."""
    mel = np.asarray(mel, dtype=np.float64)
    return dct(mel, type=2, norm="ortho", axis=1)[:, 1:n_coeffs + 1]


def _nonempty(*arrays):
    for a in arrays:
        if np.asarray(a).size == 0 or len(a) == 0:
            raise EmptyInput("metric inputs must be non-empty")


def mcd_dtw(mel_a, mel_b, n_coeffs=MCD_COEFFS):
    """Mel-cepstral distortion (dB) after DTW on Euclidean cepstral distance."""
    _nonempty(mel_a, mel_b)
    ca, cb = mel_cepstrum(mel_a, n_coeffs), mel_cepstrum(mel_b, n_coeffs)
    cost = np.sqrt(np.sum((ca[:, None, :] - cb[None, :, :]) ** 2, axis=-1))
    avg, _ = dtw(cost)
    return MCD_SCALE * avg


def _abs_dtw(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return dtw(np.abs(a[:, None] - b[None, :]))[0]


def pitch_dtw(track_a, track_b):
    """Average absolute pitch distance over DTW-aligned voiced frames."""
    a = np.asarray(track_a, dtype=np.float64)
    b = np.asarray(track_b, dtype=np.float64)
    a, b = a[a > 0], b[b > 0]
    if a.size == 0 or b.size == 0:
        raise InsufficientData("pitch DTW needs voiced frames in both tracks")
    return _abs_dtw(a, b)


def energy_mae_dtw(e_a, e_b):
    _nonempty(e_a, e_b)
    return _abs_dtw(e_a, e_b)


def pitch_moments(values):
    """Population (std, skewness, excess kurtosis) over voiced (> 0) values."""
    v = np.asarray(values, dtype=np.float64)
    v = v[v > 0]
    if v.size < 2:
        raise InsufficientData(f"need at least 2 voiced values, got {v.size}")
    c = v - v.mean()
    sd = np.sqrt(np.mean(c * c))
    if sd < 1e-8:
        return 0.0, 0.0, 0.0
    z = c / sd
    return float(sd), float(np.mean(z**3)), float(np.mean(z**4) - 3.0)


def duration_boundary_delta(pred, gt, frame_shift=0.0125):
    """Mean absolute phoneme-boundary difference in milliseconds."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise AlignmentMismatch(f"phoneme counts differ: {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise EmptyInput("no phonemes")
    return float(np.mean(np.abs(np.cumsum(pred) - np.cumsum(gt)))) * frame_shift * 1000.0


def categorize_intensity(i):
    """Band name for an intensity; values outside [0.1, 0.9] fall in the nearest band."""
    return BANDS[band_index(i)]


def band_index(i):
    i = float(i)
    if i < BAND_EDGES[0]:
        return 0
    if i < BAND_EDGES[1]:
        return 1
    return 2


def fine_index(i):
    return int(np.argmin(np.abs(FINE_LEVELS - float(i))))


def intensity_confusion(pairs, fine=False):
    """Counts indexed [intended, predicted]: 3×3 bands or 9×9 levels 0.1..0.9."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("no (intended, predicted) pairs")
    idx, n = (fine_index, 9) if fine else (band_index, 3)
    m = np.zeros((n, n), dtype=np.int64)
    for intended, predicted in pairs:
        m[idx(intended), idx(predicted)] += 1
    return m


def diagonal_mass(m):
    m = np.asarray(m)
    return float(np.trace(m) / m.sum())


@dataclass
class EvalReport:
    mcd_db: float
    pitch_sigma: float
    pitch_skewness: float
    pitch_kurtosis: float
    pitch_dtw: float
    energy_mae: float
    duration_delta_ms: float
    confusion_coarse: list = field(default_factory=list)
    confusion_fine: list = field(default_factory=list)
    diagonal_coarse: float = 0.0
    diagonal_fine: float = 0.0
    n_utterances: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for k in ("mcd_db", "pitch_sigma", "pitch_skewness", "pitch_kurtosis", "pitch_dtw",
                  "energy_mae", "duration_delta_ms"):
            if not np.isfinite(getattr(self, k)):
                raise ValueError(f"{k} is not finite")

    def to_dict(self):
        d = asdict(self)
        d["confusion_coarse"] = np.asarray(self.confusion_coarse).tolist()
        d["confusion_fine"] = np.asarray(self.confusion_fine).tolist()
        return d

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


__all__ = [
    "BANDS",
    "EvalReport",
    "band_index",
    "categorize_intensity",
    "diagonal_mass",
    "dtw",
    "duration_boundary_delta",
    "energy_mae_dtw",
    "fine_index",
    "intensity_confusion",
    "mcd_dtw",
    "mel_cepstrum",
    "pitch_dtw",
    "pitch_moments",
]
