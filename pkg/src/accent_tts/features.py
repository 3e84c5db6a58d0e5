"""Utterance-level accent descriptors: 9 functionals over 4 prosody tracks.

Layout of the 36-vector (index = 9 * track + functional):

    tracks       0 F0 (voiced frames only), 1 ΔF0, 2 energy, 3 Δenergy
    functionals  0 mean, 1 std, 2 min, 3 max, 4 range, 5 median,
                 6 skewness, 7 excess kurtosis, 8 regression slope per frame

ΔF0 is the first difference of the voiced-only F0 sequence. Skewness and
kurtosis are population moment ratios and are 0 when std < 1e-8. A track with
no values (fully unvoiced F0, or a Δ of a single value) contributes zeros.
"""
import csv
from dataclasses import dataclass

import numpy as np

from .dsp import prosody_track
from .errors import EmptyTrack, ParseError

TRACKS = ("f0", "df0", "energy", "denergy")
FUNCTIONALS = ("mean", "std", "min", "max", "range", "median", "skew", "kurt", "slope")
N_FEATURES = len(TRACKS) * len(FUNCTIONALS)
FEATURE_NAMES = tuple(f"{t}_{f}" for t in TRACKS for f in FUNCTIONALS)
MOMENT_FLOOR = 1e-8


@dataclass
class AccentFeatureVector:
    values: np.ndarray
    speaker_id: str = ""
    accent_id: str = ""
    utterance_id: str = ""
    domain: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (N_FEATURES,) or not np.all(np.isfinite(self.values)):
            raise ValueError(f"accent feature vector needs {N_FEATURES} finite values")


def functionals(x):
    """The nine functionals of one sequence, in FUNCTIONALS order."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return np.zeros(len(FUNCTIONALS))
    mu = x.mean()
    c = x - mu
    sd = np.sqrt(np.mean(c * c))
    if sd < MOMENT_FLOOR:
        skew = kurt = 0.0
    else:
        z = c / sd
        skew = np.mean(z**3)
        kurt = np.mean(z**4) - 3.0
    if x.size > 1:
        t = np.arange(x.size, dtype=np.float64)
        tc = t - t.mean()
        slope = np.dot(tc, c) / np.dot(tc, tc)
    else:
        slope = 0.0
    lo, hi = x.min(), x.max()
    return np.array([mu, sd, lo, hi, hi - lo, np.median(x), skew, kurt, slope])


def compute_functionals(track, speaker_id="", accent_id="", utterance_id="", domain=""):
    if len(track) == 0:
        raise EmptyTrack("prosody track has no frames")
    f0 = track.pitch_hz[track.pitch_hz > 0]
    energy = track.energy
    parts = [functionals(f0), functionals(np.diff(f0)), functionals(energy), functionals(np.diff(energy))]
    return AccentFeatureVector(np.concatenate(parts), speaker_id, accent_id, utterance_id, domain)


def features_from_waveform(w, cfg, **ids):
    return compute_functionals(prosody_track(w, cfg), **ids)


# L1 and L2 vectors go to separate files; the header carries no domain column.
HEADER = ["utterance_id", "speaker_id", "accent_id"] + [f"f{i:02d}" for i in range(N_FEATURES)]


def write_features_tsv(path, vectors):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(HEADER)
        for v in vectors:
            writer.writerow([v.utterance_id, v.speaker_id, v.accent_id]
                            + [repr(float(x)) for x in v.values])


def read_features_tsv(path, domain=""):
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header != HEADER:
            raise ParseError(f"{path}: unexpected header", line=1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(HEADER):
                raise ParseError(f"{path}: expected {len(HEADER)} columns, got {len(row)}", line=lineno)
            try:
                vals = np.array([float(x) for x in row[3:]])
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}", line=lineno) from None
            out.append(AccentFeatureVector(vals, row[1], row[2], row[0], domain))
    return out


__all__ = [
    "AccentFeatureVector",
    "FEATURE_NAMES",
    "N_FEATURES",
    "compute_functionals",
    "features_from_waveform",
    "functionals",
    "read_features_tsv",
    "write_features_tsv",
]
