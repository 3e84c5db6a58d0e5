"""Training targets, the optimization loop and the checkpoint format.

Checkpoint layout (little endian)::

    b"CAIT" | u32 version | u64 metadata length | metadata JSON | float64 blobs

The metadata holds the model config, step count, parameter manifest (names
and shapes, in blob order), prosody normalization statistics and the
speaker/accent index tables.
"""
import json
import logging
import struct
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import dsp
from .errors import ConfigError, ParseError, TrainingDiverged
from .model import Losses, ModelConfig, Targets, init_params, utterance_loss
from .nn import Adam

logger = logging.getLogger(__name__)

MAGIC = b"CAIT"
VERSION = 1


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    warmup: int = 4000
    lr_scale: float = 1.0
    grad_clip: float | None = 1.0
    use_cc: bool = True
    cc_sampling: str = "uniform"  # "uniform": intended intensity drawn per utterance; "label": use the label
    seed: int = 0
    log_every: int = 100

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainingSet:
    targets: list
    pitch_stats: dsp.NormStats
    energy_stats: dsp.NormStats
    speakers: list
    accents: list
    utterance_ids: list


def _raw_prosody(w, durations, cfg):
    spec = dsp.stft(w, cfg)
    mel = dsp.mel_spectrogram(w, cfg, spec)
    energy = dsp.phoneme_average(dsp.frame_energy(spec), durations)
    pitch = dsp.phoneme_average(dsp.extract_pitch(w, cfg), durations, voiced_only=True)
    return mel, pitch, energy


def build_training_set(manifest, records, cfg=None, model_cfg=None, speakers=None, accents=None,
                       pitch_stats=None, energy_stats=None):
    """Targets for labeled L2 ``records``.

    Phoneme-level pitch (voiced frames only, 0 for fully unvoiced phonemes)
    and energy are z-normalized with statistics fitted on these records unless
    given. Speaker and accent ids are mapped to table rows in sorted order.
    """
    cfg = cfg or dsp.AudioConfig()
    model_cfg = model_cfg or ModelConfig()
    if not records:
        raise ConfigError("no labeled utterances to train on")
    speakers = speakers or sorted({r.speaker_id for r in records})
    accents = accents or sorted({r.accent_id for r in records})
    if len(speakers) > model_cfg.n_speakers or len(accents) > model_cfg.n_accents:
        raise ConfigError(f"{len(speakers)} speakers / {len(accents)} accents exceed the embedding tables "
                          f"({model_cfg.n_speakers} / {model_cfg.n_accents})")
    if model_cfg.mel_dim != cfg.n_mels:
        raise ConfigError(f"model mel_dim {model_cfg.mel_dim} does not match the {cfg.n_mels} analysis mel bands")
    raw = []
    for r in records:
        if r.intensity_label is None:
            raise ConfigError(f"{r.speaker_id}/{r.utterance_id} has no intensity label")
        raw.append(_raw_prosody(manifest.waveform(r, cfg), r.durations, cfg))
    if pitch_stats is None:
        pitch_stats, _ = dsp.fit_normalize(np.concatenate([p for _, p, _ in raw]))
    if energy_stats is None:
        energy_stats, _ = dsp.fit_normalize(np.concatenate([e for _, _, e in raw]))
    targets = []
    for r, (mel, pitch, energy) in zip(records, raw):
        targets.append(Targets(r.phoneme_ids, speakers.index(r.speaker_id), accents.index(r.accent_id),
                               r.intensity_label, r.durations, pitch_stats.normalize(pitch),
                               energy_stats.normalize(energy), mel))
    return TrainingSet(targets, pitch_stats, energy_stats, speakers, accents,
                       [r.utterance_id for r in records])


CC_RANGE = (0.05, 0.95)


def batch_loss(batch, params, cfg, rng=None, use_cc=True, cc_sampling="label"):
    """Mean of per-utterance losses; gradients are accumulated into ``params``."""
    if cc_sampling not in ("uniform", "label"):
        raise ConfigError(f"unknown cc_sampling {cc_sampling!r}")
    totals = {n: 0.0 for n in Losses.NAMES}
    scale = 1.0 / len(batch)
    for t in batch:
        cc_i = None
        if use_cc and cc_sampling == "uniform":
            cc_i = float((rng or np.random.default_rng(0)).uniform(*CC_RANGE))
        losses = utterance_loss(t, params, cfg, rng, use_cc=use_cc, cc_intensity=cc_i)
        (losses.l_final * scale).backward()
        for n, v in losses.values().items():
            totals[n] += v * scale
    return totals


def train(training_set, model_cfg, train_cfg, params=None, callback=None):
    """Adam with warmup; returns ``(params, history)`` with one loss dict per step."""
    rng = np.random.default_rng(train_cfg.seed)
    params = params if params is not None else init_params(model_cfg, seed=train_cfg.seed)
    opt = Adam(params, model_cfg.hidden_dim, warmup=train_cfg.warmup, lr_scale=train_cfg.lr_scale,
               grad_clip=train_cfg.grad_clip)
    data = training_set.targets
    history = []
    for step in range(1, train_cfg.steps + 1):
        if len(data) <= train_cfg.batch_size:
            batch = data
        else:
            batch = [data[i] for i in rng.choice(len(data), train_cfg.batch_size, replace=False)]
        params.zero_grad()
        vals = batch_loss(batch, params, model_cfg, rng, use_cc=train_cfg.use_cc,
                          cc_sampling=train_cfg.cc_sampling)
        if not all(np.isfinite(v) for v in vals.values()):
            raise TrainingDiverged(f"non-finite loss at step {step}: {vals}")
        vals["lr"] = opt.step()
        vals["step"] = step
        history.append(vals)
        if train_cfg.log_every and step % train_cfg.log_every == 0:
            logger.info("step %d l_final %.4f l_mel %.4f l_cc %.5f", step, vals["l_final"],
                        vals["l_mel"], vals["l_cc"])
        if callback is not None:
            callback(step, vals, params)
    return params, history


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, params, model_cfg, step=0, extra=None):
    meta = {
        "model_config": model_cfg.to_dict(),
        "step": int(step),
        "params": params.manifest(),
    }
    if extra:
        meta.update(extra)
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for _, t in params.items():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(params, model_cfg, metadata)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ParseError(f"{path}: not a checkpoint (bad magic)")
    if len(data) < 16:
        raise ParseError(f"{path}: truncated header")
    version, n = struct.unpack("<IQ", data[4:16])
    if version != VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    try:
        meta = json.loads(data[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: corrupt metadata ({exc})") from None
    cfg = ModelConfig.from_dict(meta["model_config"])
    params = init_params(cfg)
    offset = 16 + n
    state = {}
    for entry in meta["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(data):
            raise ParseError(f"{path}: truncated parameter data at {entry['name']}")
        state[entry["name"]] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    if offset != len(data):
        raise ParseError(f"{path}: {len(data) - offset} trailing bytes")
    params.load_state(state)
    return params, cfg, meta


def norm_stats_meta(ts):
    return {
        "pitch_stats": {"mean": ts.pitch_stats.mean, "std": ts.pitch_stats.std},
        "energy_stats": {"mean": ts.energy_stats.mean, "std": ts.energy_stats.std},
        "speakers": list(ts.speakers),
        "accents": list(ts.accents),
    }


__all__ = [
    "TrainConfig",
    "TrainingSet",
    "batch_loss",
    "build_training_set",
    "load_checkpoint",
    "norm_stats_meta",
    "save_checkpoint",
    "train",
]
