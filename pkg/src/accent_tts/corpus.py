"""Paired L1/L2 corpora: synthetic generation, on-disk layout, splits, intensity labels.

Layout of a corpus root::

    root/manifest.tsv          one row per rendition (L1 or L2)
    root/manifest.labeled.tsv  same, with the intensity column filled for L2 rows
    root/wav/*.wav
    root/corpus_meta.json      generation parameters and per-utterance magnitudes

Manifest columns: utterance_id, speaker_id, accent_id, domain (L1|L2), wav_path
(relative to root), phonemes (space separated ARPAbet), durations (space
separated frame counts), intensity (optional).
"""
import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import dsp
from .errors import AlignmentMismatch, CorpusTooSmall, MissingAsset, ParseError, UnpairedUtterance
from .features import compute_functionals
from .ranker import DEFAULT_C, DEFAULT_K_FACTOR, fit_all_accents

logger = logging.getLogger(__name__)

VOWELS = ("AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW")
VOICED_CONS = ("B", "D", "DH", "G", "JH", "L", "M", "N", "NG", "R", "V", "W", "Y", "Z", "ZH")
UNVOICED_CONS = ("CH", "F", "HH", "K", "P", "S", "SH", "T", "TH")
PHONEMES = ("sil",) + VOWELS + VOICED_CONS + UNVOICED_CONS
PHONEME_IDS = {p: i for i, p in enumerate(PHONEMES)}

MANIFEST = "manifest.tsv"
LABELED_MANIFEST = "manifest.labeled.tsv"
META = "corpus_meta.json"
COLUMNS = ["utterance_id", "speaker_id", "accent_id", "domain", "wav_path",
           "phonemes", "durations", "intensity"]
MAX_RECONCILE = 3


def phoneme_ids(phonemes):
    try:
        return np.array([PHONEME_IDS[p] for p in phonemes], dtype=np.intp)
    except KeyError as exc:
        raise IndexError(f"unknown phoneme {exc.args[0]!r}") from None


@dataclass
class UtteranceRecord:
    utterance_id: str
    speaker_id: str
    accent_id: str
    domain: str
    wav_path: str
    phonemes: list
    durations: np.ndarray
    intensity_label: float | None = None
    waveform: dsp.Waveform | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.durations = np.asarray(self.durations, dtype=np.int64)
        if len(self.phonemes) != self.durations.size:
            raise AlignmentMismatch(f"{self.key}: {len(self.phonemes)} phonemes, {self.durations.size} durations")
        if np.any(self.durations < 1):
            raise AlignmentMismatch(f"{self.key}: durations must be >= 1")
        if self.intensity_label is not None and not 0.0 < self.intensity_label < 1.0:
            raise ValueError(f"{self.key}: intensity label must lie in (0, 1)")

    def __eq__(self, other):
        if not isinstance(other, UtteranceRecord):
            return NotImplemented
        return (self.utterance_id, self.speaker_id, self.accent_id, self.domain, self.wav_path,
                list(self.phonemes), self.intensity_label) == (
                    other.utterance_id, other.speaker_id, other.accent_id, other.domain, other.wav_path,
                    list(other.phonemes), other.intensity_label) and np.array_equal(self.durations, other.durations)

    @property
    def key(self):
        return (self.speaker_id, self.utterance_id)

    @property
    def phoneme_ids(self):
        return phoneme_ids(self.phonemes)

    @property
    def n_frames(self):
        return int(self.durations.sum())

    def load(self, root, cfg):
        if self.waveform is None:
            path = os.path.join(root, self.wav_path)
            if not os.path.exists(path):
                raise MissingAsset(f"missing audio file {path}")
            self.waveform = dsp.read_wav(path, cfg.sample_rate)
        return self.waveform


@dataclass
class AccentProfile:
    """Perturbation applied to an L2 rendition at magnitude 1."""

    pitch_shift_hz: float = 20.0
    contour_gain: float = 0.15
    energy_gain: float = 0.3
    duration_stretch: float = 0.3


DEFAULT_PROFILES = (
    AccentProfile(20.0, 0.15, 0.30, 0.30),
    AccentProfile(-15.0, 0.20, 0.40, 0.20),
    AccentProfile(12.0, 0.25, 0.25, 0.40),
    AccentProfile(-10.0, 0.18, 0.35, 0.25),
    AccentProfile(25.0, 0.10, 0.20, 0.35),
    AccentProfile(-20.0, 0.22, 0.30, 0.15),
)


@dataclass
class SyntheticSpec:
    n_speakers: int = 4
    n_accents: int = 2
    utterances_per_speaker: int = 10
    profiles: tuple = DEFAULT_PROFILES
    magnitude_scales: tuple = (0.2, 0.5, 1.0)
    min_phonemes: int = 6
    max_phonemes: int = 12
    min_duration: int = 3
    max_duration: int = 9
    seed: int = 0

    def __post_init__(self):
        self.profiles = tuple(p if isinstance(p, AccentProfile) else AccentProfile(**p)
                              for p in self.profiles)
        vals = [v for p in self.profiles for v in asdict(p).values()] + list(self.magnitude_scales)
        if not np.all(np.isfinite(vals)) or min(self.magnitude_scales, default=0) < 0:
            raise ValueError("perturbation magnitudes must be finite and non-negative")

    def profile(self, accent_index):
        return self.profiles[accent_index % len(self.profiles)]

    def to_dict(self):
        d = asdict(self)
        d["profiles"] = [asdict(p) for p in self.profiles]
        d["magnitude_scales"] = list(self.magnitude_scales)
        return d


@dataclass
class CorpusManifest:
    records: list
    splits: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    root: str | None = None

    def by_domain(self, domain):
        return [r for r in self.records if r.domain == domain]

    def split(self, name):
        return [r for r in self.records if self.splits.get(r.key) == name]

    def pairs(self):
        """``[(l1_record, l2_record)]`` for every L2 rendition; raises if one is unmatched."""
        l1 = {r.key: r for r in self.by_domain("L1")}
        out = []
        for r in self.by_domain("L2"):
            if r.key not in l1:
                raise UnpairedUtterance(f"L2 utterance {r.speaker_id}/{r.utterance_id} has no L1 rendition")
            out.append((l1[r.key], r))
        return out

    def waveform(self, rec, cfg):
        return rec.load(self.root or ".", cfg)


# ---------------------------------------------------------------- synthesis

_FORMANTS = {}


def _formants(ph):
    """Deterministic pseudo-formants per phoneme (Hz)."""
    if ph not in _FORMANTS:
        i = PHONEME_IDS[ph]
        f1 = 300.0 + 55.0 * ((i * 7) % 11)
        f2 = 900.0 + 130.0 * ((i * 5) % 13)
        f3 = 2300.0 + 90.0 * ((i * 3) % 9)
        _FORMANTS[ph] = np.array([f1, f2, f3])
    return _FORMANTS[ph]


def _speaker_f0(speaker_index):
    bases = (110.0, 205.0, 125.0, 190.0, 100.0, 220.0, 140.0, 175.0)
    return bases[speaker_index % len(bases)] + 3.0 * (speaker_index // len(bases))


def render(phonemes, durations, f0_frames, amp_frames, cfg, noise_seed):
    """Harmonic-plus-noise synthesis on the STFT frame grid.

    ``f0_frames``/``amp_frames`` give per-frame pitch and amplitude; voiced
    phonemes are rendered as formant-shaped harmonics, unvoiced ones as noise.
    The sample count is chosen so that the STFT yields exactly ``sum(durations)``
    frames.
    """
    F = int(np.sum(durations))
    fs, hop, sr = cfg.frame_samples, cfg.hop_samples, cfg.sample_rate
    n = fs + (F - 1) * hop
    centers = np.arange(F) * hop + fs / 2.0
    t = np.arange(n, dtype=np.float64)
    f0 = np.interp(t, centers, f0_frames)
    amp = np.interp(t, centers, amp_frames)
    ph_frame = np.repeat(np.arange(len(phonemes)), durations)
    ph_sample = ph_frame[np.clip(((t - fs / 2.0) / hop + 0.5).astype(np.int64), 0, F - 1)]
    voiced_ph = np.array([p not in UNVOICED_CONS and p != "sil" for p in phonemes])
    voiced = voiced_ph[ph_sample]
    formants = np.stack([_formants(p) for p in phonemes])[ph_sample]  # [n, 3]

    phase = 2.0 * np.pi * np.cumsum(f0) / sr
    harm = np.zeros(n)
    power = np.zeros(n)
    for h in range(1, int(5000.0 // f0.min()) + 1):
        freq = h * f0
        env = np.sum(1.0 / (1.0 + ((freq[:, None] - formants) / 120.0) ** 2), axis=1)
        env = np.where(freq < 5000.0, env / h**0.5, 0.0)
        harm += env * np.sin(h * phase)
        power += 0.5 * env**2
    harm /= np.sqrt(np.maximum(power, 1e-12))
    noise = np.random.default_rng(noise_seed).normal(0.0, 1.0, n)
    x = amp * np.where(voiced, 0.25 * harm, 0.08 * noise)
    return np.clip(x, -1.0, 1.0)


def _contours(n_frames, base_f0, phonemes, durations, mod, magnitude, profile):
    tau = (np.arange(n_frames) + 0.5) / n_frames
    f0 = base_f0 * (1.0 - 0.06 * tau)
    k1, p1, k2, p2 = mod
    f0 = f0 + magnitude * (profile.pitch_shift_hz
                           + profile.contour_gain * base_f0 * np.sin(2 * np.pi * k1 * tau + p1))
    ph_amp = np.array([1.0 if p in VOWELS else (0.85 if p in VOICED_CONS else 0.7) for p in phonemes])
    amp = np.repeat(ph_amp, durations)
    amp = amp * (1.0 + magnitude * profile.energy_gain * np.sin(2 * np.pi * k2 * tau + p2))
    return np.maximum(f0, 70.0), np.maximum(amp, 0.05)


def generate_synthetic_corpus(spec, cfg=None):
    """Paired L1 (flat prosody) and L2 (accent-perturbed) renditions of each utterance.

    Speaker ``s`` speaks accent ``s mod n_accents``; utterance ``u`` of a
    speaker is perturbed at magnitude ``magnitude_scales[u mod len]`` times
    its accent profile. At magnitude 0 the two renditions are identical.
    """
    cfg = cfg or dsp.AudioConfig()
    records = []
    magnitudes = {}
    for s in range(spec.n_speakers):
        acc = s % spec.n_accents
        profile = spec.profile(acc)
        base = _speaker_f0(s)
        spk, acc_id = f"spk{s:02d}", f"acc{acc}"
        # the contour shape is a property of the accent, shared by its utterances
        arng = np.random.default_rng([spec.seed, 1000 + acc])
        mod = (int(arng.integers(1, 3)), float(arng.uniform(0, 2 * np.pi)),
               int(arng.integers(1, 4)), float(arng.uniform(0, 2 * np.pi)))
        for u in range(spec.utterances_per_speaker):
            rng = np.random.default_rng([spec.seed, s, u])
            utt = f"{spk}_u{u:04d}"
            L = int(rng.integers(spec.min_phonemes, spec.max_phonemes + 1))
            body = list(rng.choice(PHONEMES[1:], size=L))
            phonemes = body
            durs = rng.integers(spec.min_duration, spec.max_duration + 1, size=L)
            pattern = rng.uniform(-1.0, 1.0, size=L)
            mag = float(spec.magnitude_scales[u % len(spec.magnitude_scales)]) if spec.magnitude_scales else 0.0
            magnitudes[utt] = mag
            noise_seed = [spec.seed, s, u, 1]
            for domain, m in (("L1", 0.0), ("L2", mag)):
                d = durs if m == 0.0 else np.maximum(
                    1, np.rint(durs * (1.0 + profile.duration_stretch * m * pattern)).astype(np.int64))
                f0, amp = _contours(int(d.sum()), base, phonemes, d, mod, m, profile)
                x = render(phonemes, d, f0, amp, cfg, noise_seed)
                # quantize exactly as the on-disk float32 representation will
                w = dsp.Waveform(x.astype(np.float32).astype(np.float64), cfg.sample_rate)
                records.append(UtteranceRecord(utt, spk, acc_id, domain,
                                               f"wav/{utt}_{domain}.wav", list(phonemes), d, None, w))
    meta = {"generator": "synthetic", "spec": spec.to_dict(), "audio": cfg.to_dict(),
            "magnitudes": magnitudes}
    return CorpusManifest(records, {}, meta)


# ---------------------------------------------------------------- disk layout

def _fmt_intensity(v):
    return "" if v is None else repr(float(v))


def write_manifest(path, records, root=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(COLUMNS)
        for r in records:
            wav = r.wav_path
            if root is not None:
                wav = os.path.relpath(os.path.join(root, r.wav_path), os.path.dirname(os.path.abspath(path)))
            w.writerow([r.utterance_id, r.speaker_id, r.accent_id, r.domain, wav,
                        " ".join(r.phonemes), " ".join(str(int(d)) for d in r.durations),
                        _fmt_intensity(r.intensity_label)])


def write_corpus(manifest, root, cfg=None):
    cfg = cfg or dsp.AudioConfig()
    os.makedirs(os.path.join(root, "wav"), exist_ok=True)
    for r in manifest.records:
        dsp.write_wav(os.path.join(root, r.wav_path), manifest.waveform(r, cfg))
    write_manifest(os.path.join(root, MANIFEST), manifest.records)
    meta = dict(manifest.meta)
    if manifest.splits:
        meta["splits"] = {f"{k[0]}/{k[1]}": v for k, v in sorted(manifest.splits.items())}
    with open(os.path.join(root, META), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.root = root
    return manifest


def _parse_row(row, lineno, path):
    if len(row) == 7:
        row = row + [""]
    if len(row) != 8:
        raise ParseError(f"{path}: expected 7 or 8 columns, got {len(row)}", line=lineno)
    utt, spk, acc, domain, wav, phs, durs, inten = row
    if domain not in ("L1", "L2"):
        raise ParseError(f"{path}: domain must be L1 or L2, got {domain!r}", line=lineno)
    phonemes = phs.split()
    try:
        durations = [int(x) for x in durs.split()]
        intensity = float(inten) if inten.strip() else None
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}", line=lineno) from None
    if not phonemes or len(phonemes) != len(durations):
        raise ParseError(f"{path}: phoneme/duration count mismatch", line=lineno)
    if min(durations) < 1:
        raise ParseError(f"{path}: durations must be >= 1", line=lineno)
    if intensity is not None and not 0.0 < intensity < 1.0:
        raise ParseError(f"{path}: intensity must lie in (0, 1)", line=lineno)
    unknown = [p for p in phonemes if p not in PHONEME_IDS]
    if unknown:
        raise ParseError(f"{path}: unknown phoneme {unknown[0]!r}", line=lineno)
    return UtteranceRecord(utt, spk, acc, domain, wav, phonemes, durations, intensity)


def reconcile_durations(durations, n_frames, where=""):
    """Absorb a frame-count mismatch of up to 3 frames into the final phoneme."""
    durations = np.array(durations, dtype=np.int64)
    diff = int(n_frames) - int(durations.sum())
    if diff == 0:
        return durations
    if abs(diff) > MAX_RECONCILE or durations[-1] + diff < 1:
        raise AlignmentMismatch(f"{where}: durations sum to {durations.sum()} but audio has {n_frames} frames")
    logger.warning("%s: adjusting final phoneme duration by %+d frame(s)", where, diff)
    durations[-1] += diff
    return durations


def load_corpus(root, cfg=None, manifest_name=None):
    """Parse and validate a corpus directory, reconciling durations with the audio."""
    cfg = cfg or dsp.AudioConfig()
    if manifest_name is None:
        manifest_name = LABELED_MANIFEST if os.path.exists(os.path.join(root, LABELED_MANIFEST)) else MANIFEST
    path = os.path.join(root, manifest_name)
    if not os.path.exists(path):
        raise ParseError(f"missing manifest {path}")
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None or header[:7] != COLUMNS[:7]:
            raise ParseError(f"{path}: bad or missing header", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            rec = _parse_row(row, lineno, path)
            w = rec.load(root, cfg)
            n = dsp.num_frames(len(w), cfg.frame_samples, cfg.hop_samples)
            try:
                rec.durations = reconcile_durations(rec.durations, n, f"{path}:{lineno}")
            except AlignmentMismatch as exc:
                raise ParseError(str(exc), line=lineno) from None
            records.append(rec)
    meta, splits = {}, {}
    meta_path = os.path.join(root, META)
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            meta = json.load(fh)
        for k, v in meta.pop("splits", {}).items():
            spk, utt = k.split("/", 1)
            splits[(spk, utt)] = v
    return CorpusManifest(records, splits, meta, root)


def attach_l1_dir(manifest, l1_dir, cfg=None):
    """Add externally produced L1 renditions found as ``l1_dir/<utterance_id>.wav``.

    Durations of the added records are the L2 durations rescaled to the L1
    audio length.
    """
    cfg = cfg or dsp.AudioConfig()
    have = {r.key for r in manifest.by_domain("L1")}
    added = []
    for r in manifest.by_domain("L2"):
        if r.key in have:
            continue
        path = os.path.join(l1_dir, f"{r.utterance_id}.wav")
        if not os.path.exists(path):
            continue
        w = dsp.read_wav(path, cfg.sample_rate)
        n = dsp.num_frames(len(w), cfg.frame_samples, cfg.hop_samples)
        d = np.maximum(1, np.floor(r.durations * n / r.durations.sum()).astype(np.int64))
        d[-1] = max(1, d[-1] + n - int(d.sum()))
        if d.sum() != n:
            raise AlignmentMismatch(f"{path}: too short for {len(d)} phonemes")
        added.append(UtteranceRecord(r.utterance_id, r.speaker_id, r.accent_id, "L1",
                                     os.path.abspath(path), list(r.phonemes), d, None, w))
    return replace(manifest, records=manifest.records + added)


# ---------------------------------------------------------------- splits

def split_corpus(manifest, seed=0, ratios=(8, 1, 1)):
    """Per-speaker shuffled train/val/test assignment at 8:1:1 (rounded to nearest).

    Both renditions of an utterance land in the same split.
    """
    by_spk = {}
    for r in manifest.records:
        by_spk.setdefault(r.speaker_id, set()).add(r.utterance_id)
    rng = np.random.default_rng(seed)
    total = sum(ratios)
    splits = {}
    for spk in sorted(by_spk):
        utts = sorted(by_spk[spk])
        n = len(utts)
        if n < 10:
            raise CorpusTooSmall(f"speaker {spk} has {n} utterances; need at least 10")
        n_val = int(np.floor(n * ratios[1] / total + 0.5))
        n_test = int(np.floor(n * ratios[2] / total + 0.5))
        order = rng.permutation(n)
        for rank, idx in enumerate(order):
            name = "val" if rank < n_val else ("test" if rank < n_val + n_test else "train")
            splits[(spk, utts[idx])] = name
    return replace(manifest, splits=splits)


# ---------------------------------------------------------------- intensity labels

def extract_features(manifest, cfg=None, jobs=1):
    """Accent feature vectors for every record, in record order."""
    cfg = cfg or dsp.AudioConfig()

    def one(r):
        track = dsp.prosody_track(manifest.waveform(r, cfg), cfg)
        return compute_functionals(track, r.speaker_id, r.accent_id, r.utterance_id, r.domain)

    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(one, manifest.records))
    return [one(r) for r in manifest.records]


def label_intensity(manifest, cfg=None, C=DEFAULT_C, k_factor=DEFAULT_K_FACTOR, seed=0, jobs=1,
                    features=None):
    """Fit one ranker per accent on matched L1/L2 features and label every L2 record.

    Returns ``(labeled_manifest, models, features)``. L1 records stay unlabeled.
    """
    manifest.pairs()  # raises UnpairedUtterance before any work is done
    feats = features if features is not None else extract_features(manifest, cfg, jobs)
    l1 = [f for f in feats if f.domain == "L1"]
    l2 = [f for f in feats if f.domain == "L2"]
    models = fit_all_accents(l1, l2, C=C, k_factor=k_factor, seed=seed)
    labels = {}
    for f in l2:
        labels[(f.speaker_id, f.utterance_id)] = models[f.accent_id].intensity(f)
    records = [
        replace(r, intensity_label=labels[r.key] if r.domain == "L2" else None)
        for r in manifest.records
    ]
    return replace(manifest, records=records), models, feats
