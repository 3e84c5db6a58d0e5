"""Signal-processing front-end: STFT, log-mel, frame energy, pitch, phoneme prosody.

Everything runs in double precision and is deterministic.
"""
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window, resample_poly

from .errors import AlignmentMismatch, ConfigError, InputTooShort

MEL_FLOOR = 1e-5
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class AudioConfig:
    sample_rate: int = 22050
    frame_length: float = 0.050
    frame_shift: float = 0.0125
    fft_size: int | None = None
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float | None = None
    pitch_fmin: float = 60.0
    pitch_fmax: float = 500.0
    voicing_threshold: float = 0.45

    def __post_init__(self):
        if not self.frame_shift < self.frame_length:
            raise ConfigError("frame_shift must be shorter than frame_length")
        if self.n_mels < 1:
            raise ConfigError("n_mels must be >= 1")
        if not 0 < self.pitch_fmin < self.pitch_fmax < self.sample_rate / 2:
            raise ConfigError("need 0 < pitch_fmin < pitch_fmax < sample_rate/2")
        if not 0.0 < self.voicing_threshold < 1.0:
            raise ConfigError("voicing_threshold must lie in (0, 1)")
        if self.fft_size is not None and (
            self.fft_size < self.frame_samples or self.fft_size & (self.fft_size - 1)
        ):
            raise ConfigError("fft_size must be a power of two >= frame samples")

    @property
    def frame_samples(self):
        return int(self.frame_length * self.sample_rate + 1e-9)

    @property
    def hop_samples(self):
        return int(self.frame_shift * self.sample_rate + 1e-9)

    @property
    def n_fft(self):
        if self.fft_size is not None:
            return self.fft_size
        return 1 << (self.frame_samples - 1).bit_length()

    @property
    def mel_fmax(self):
        return self.fmax if self.fmax is not None else self.sample_rate / 2

    def to_dict(self):
        return asdict(self)


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise InputTooShort("waveform must be a non-empty mono signal")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.size


@dataclass
class ProsodyTrack:
    pitch_hz: np.ndarray
    energy: np.ndarray

    def __post_init__(self):
        self.pitch_hz = np.asarray(self.pitch_hz, dtype=np.float64)
        self.energy = np.asarray(self.energy, dtype=np.float64)
        if self.pitch_hz.shape != self.energy.shape:
            raise AlignmentMismatch("pitch and energy tracks differ in length")

    def __len__(self):
        return self.pitch_hz.size

    @property
    def voiced(self):
        return self.pitch_hz > 0


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float = field(default=1.0)

    def normalize(self, values):
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, values):
        return np.asarray(values, dtype=np.float64) * self.std + self.mean


def num_frames(n_samples, frame_samples, hop_samples):
    if n_samples < frame_samples:
        raise InputTooShort(f"{n_samples} samples is shorter than one {frame_samples}-sample frame")
    return 1 + (n_samples - frame_samples) // hop_samples


def frame_signal(x, frame_samples, hop_samples):
    n = num_frames(len(x), frame_samples, hop_samples)
    idx = np.arange(frame_samples)[None, :] + hop_samples * np.arange(n)[:, None]
    return x[idx]


def stft(w, cfg):
    """Magnitude STFT, Hann window, no centering: [frames, n_fft/2 + 1]."""
    frames = frame_signal(w.samples, cfg.frame_samples, cfg.hop_samples)
    win = get_window("hann", cfg.frame_samples, fftbins=True)
    return np.abs(np.fft.rfft(frames * win, n=cfg.n_fft, axis=1))


def frame_energy(spec):
    """Per-frame L2 norm of the STFT magnitudes."""
    return np.sqrt(np.sum(np.square(spec), axis=1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg):
    """Triangular filters with peak 1 on the HTK mel scale: [n_mels, n_fft/2 + 1]."""
    n_bins = cfg.n_fft // 2 + 1
    freqs = np.linspace(0.0, cfg.sample_rate / 2, n_bins)
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.mel_fmax), cfg.n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    # filters narrower than one bin would be empty; give them their nearest bin
    empty = fb.sum(axis=1) == 0
    if np.any(empty):
        for r in np.flatnonzero(empty):
            fb[r, np.argmin(np.abs(freqs - mid[r, 0]))] = 1.0
    return fb


def mel_spectrogram(w, cfg, spec=None):
    if spec is None:
        spec = stft(w, cfg)
    return np.log(np.maximum(spec @ mel_filterbank(cfg).T, MEL_FLOOR))


def extract_pitch(w, cfg):
    """Normalized-autocorrelation pitch per STFT frame (Hz, 0 when unvoiced).

    For each lag in the search band the normalized cross-correlation between
    the frame and its shifted copy is computed; the first local peak within 5%
    of the best one is refined by parabolic interpolation. Frames whose peak
    falls below ``cfg.voicing_threshold`` are unvoiced.
    """
    frames = frame_signal(w.samples, cfg.frame_samples, cfg.hop_samples)
    frames = frames - frames.mean(axis=1, keepdims=True)
    n_frames, N = frames.shape
    sr = cfg.sample_rate
    lag_min = max(1, int(np.floor(sr / cfg.pitch_fmax)))
    lag_max = min(N - 2, int(np.ceil(sr / cfg.pitch_fmin)))

    nfft = 1 << (2 * N - 1).bit_length()
    spec = np.fft.rfft(frames, n=nfft, axis=1)
    acf = np.fft.irfft(spec * np.conj(spec), n=nfft, axis=1)[:, : lag_max + 2]
    sq = np.square(frames)
    csum = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(sq, axis=1)], axis=1)
    lags = np.arange(lag_max + 2)
    head = csum[:, N - lags]  # sum of x[0:N-lag]^2
    tail = csum[:, N:N + 1] - csum[:, lags]  # sum of x[lag:N]^2
    denom = np.sqrt(head * tail)
    with np.errstate(invalid="ignore", divide="ignore"):
        nccf = np.where(denom > 1e-12, acf / np.where(denom > 1e-12, denom, 1.0), 0.0)

    pitch = np.zeros(n_frames)
    for f in range(n_frames):
        r = nccf[f]
        band = r[lag_min:lag_max + 1]
        best = band.max()
        if not best >= cfg.voicing_threshold:
            continue
        cand = lag_min + int(np.argmax(band))
        target = 0.95 * best
        for lag in range(lag_min, lag_max + 1):
            if r[lag] >= target and r[lag] >= r[lag - 1] and r[lag] >= r[lag + 1]:
                cand = lag
                break
        a, b, c = r[cand - 1], r[cand], r[cand + 1]
        curv = a - 2 * b + c
        shift = 0.5 * (a - c) / curv if curv < 0 else 0.0
        lag = cand + float(np.clip(shift, -0.5, 0.5))
        pitch[f] = float(np.clip(sr / lag, cfg.pitch_fmin, cfg.pitch_fmax))
    return pitch


def prosody_track(w, cfg):
    """Pitch and energy for one waveform on the shared STFT frame grid."""
    return ProsodyTrack(extract_pitch(w, cfg), frame_energy(stft(w, cfg)))


def _check_durations(n_values, durations):
    durations = np.asarray(durations, dtype=np.int64)
    if durations.ndim != 1 or durations.size == 0 or np.any(durations < 1):
        raise AlignmentMismatch("every phoneme needs a duration of at least one frame")
    if durations.sum() != n_values:
        raise AlignmentMismatch(f"durations sum to {durations.sum()} but there are {n_values} frames")
    return durations


def phoneme_average(frame_values, durations, voiced_only=False):
    """Mean of ``frame_values`` over each phoneme's frame span.

    With ``voiced_only`` (pitch), zeros are excluded from the mean and a fully
    unvoiced span averages to 0.
    """
    values = np.asarray(frame_values, dtype=np.float64)
    durations = _check_durations(values.size, durations)
    starts = np.concatenate([[0], np.cumsum(durations)[:-1]])
    if not voiced_only:
        return np.add.reduceat(values, starts) / durations
    voiced = values > 0
    sums = np.add.reduceat(np.where(voiced, values, 0.0), starts)
    counts = np.add.reduceat(voiced.astype(np.float64), starts)
    return np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)


def fit_normalize(values):
    """Population mean/std (std floored at 1e-8) and the normalized values."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("fit_normalize needs at least one value")
    mu = float(values.mean())
    sd = float(values.std())
    stats = NormStats(mu, max(sd, STD_FLOOR))
    if sd < STD_FLOOR:
        return stats, np.zeros_like(values)
    return stats, stats.normalize(values)


def read_wav(path, target_rate=None):
    """Read a mono 16-bit PCM or 32-bit float WAV, resampling when needed."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: only single-channel audio is supported")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    if target_rate is not None and rate != target_rate:
        x = resample(x, rate, target_rate)
        rate = target_rate
    return Waveform(x, rate)


def resample(x, rate_in, rate_out):
    """Polyphase windowed-sinc (Kaiser) resampling."""
    from math import gcd

    g = gcd(int(rate_in), int(rate_out))
    return resample_poly(x, int(rate_out) // g, int(rate_in) // g, window=("kaiser", 5.0))


def write_wav(path, w):
    """Write as 32-bit float so round trips are exact."""
    wavfile.write(path, int(w.sample_rate), np.asarray(w.samples, dtype=np.float32))
