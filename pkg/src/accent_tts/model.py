"""Accent- and intensity-conditioned non-autoregressive acoustic model.

Phonemes are encoded by a stack of feed-forward transformer (FFT) blocks, an
accent variance adaptor injects speaker, accent and intensity embeddings and
predicts phoneme-level pitch, energy and duration, a length regulator expands
to frames and a second FFT stack decodes mel frames. A bidirectional GRU reads
the generated mel back into an intensity estimate for the consistency loss.

Every function takes the :class:`ParamStore` explicitly. Passing an ``rng``
enables dropout (training mode); ``rng=None`` is evaluation mode.
"""
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError, EmptyInput, IntensityRange, ShapeError
from .nn import ParamStore, Tensor, as_tensor, concat, conv1d, dropout, layer_norm, linear, mse_loss
from .nn import bigru, relu, self_attention, sigmoid, sinusoid_positions
from .nn.tensor import take_rows

VOCAB_SIZE = 40  # ARPAbet without stress marks plus silence


@dataclass(frozen=True)
class ModelConfig:
    n_blocks: int = 2
    hidden_dim: int = 64
    n_heads: int = 2
    conv_kernel: int = 3
    ffn_dim: int = 128
    vocab_size: int = VOCAB_SIZE
    n_speakers: int = 14
    n_accents: int = 6
    accent_dim: int = 32
    intensity_dim: int = 32
    predictor_channels: int = 64
    predictor_kernel: int = 3
    upsample_kernel: int = 9
    mel_dim: int = 80
    dropout: float = 0.5
    gru_hidden: int = 32

    def __post_init__(self):
        if self.accent_dim + self.intensity_dim != self.hidden_dim:
            raise ConfigError(
                f"accent_dim + intensity_dim ({self.accent_dim} + {self.intensity_dim}) "
                f"must equal hidden_dim ({self.hidden_dim})"
            )
        if self.hidden_dim % self.n_heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by n_heads {self.n_heads}")
        for name in ("conv_kernel", "predictor_kernel", "upsample_kernel"):
            if getattr(self, name) % 2 == 0:
                raise ConfigError(f"{name} must be odd")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        for f in fields(self):
            if f.type is int and getattr(self, f.name) < 1:
                raise ConfigError(f"{f.name} must be >= 1")

    @classmethod
    def full(cls, **overrides):
        """Full-size preset."""
        base = dict(n_blocks=6, hidden_dim=256, n_heads=2, ffn_dim=1024, accent_dim=128,
                    intensity_dim=128, predictor_channels=256, gru_hidden=128)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def desk(cls, **overrides):
        return cls(**overrides)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class AdaptorOutput:
    hidden: Tensor          # H''_ph [T, hidden]
    pitch_pred: Tensor      # [T]
    energy_pred: Tensor     # [T]
    log_duration_pred: Tensor  # [T], log(1 + d)
    pitch_embedding: Tensor    # [T, hidden]
    energy_embedding: Tensor   # [T, hidden]
    frames: Tensor          # H_fm [sum(durations), hidden]
    durations: np.ndarray


@dataclass
class Losses:
    l_mel: Tensor
    l_dur: Tensor
    l_p_pitch: Tensor
    l_p_energy: Tensor
    l_cc: Tensor
    l_final: Tensor

    NAMES = ("l_mel", "l_dur", "l_p_pitch", "l_p_energy", "l_cc", "l_final")

    def values(self):
        return {n: float(getattr(self, n).data) for n in self.NAMES}


@dataclass
class SynthesisRequest:
    phoneme_ids: np.ndarray
    speaker_id: int
    accent_id: int
    intensity: float

    def __post_init__(self):
        self.phoneme_ids = np.asarray(self.phoneme_ids, dtype=np.intp)
        check_intensity(self.intensity)


def check_intensity(intensity):
    v = float(intensity.data) if isinstance(intensity, Tensor) else float(intensity)
    if not 0.0 < v < 1.0:
        raise IntensityRange(f"intensity must lie in the open interval (0, 1), got {v}")


def _index(n, i, what):
    if not 0 <= int(i) < n:
        raise IndexError(f"{what} {i} out of range for table of {n}")
    return int(i)


# ---------------------------------------------------------------- parameters

def _fft_block_params(s, cfg, rng):
    H, F, k = cfg.hidden_dim, cfg.ffn_dim, cfg.conv_kernel
    for name in ("Wq", "Wk", "Wv", "Wo"):
        s.weight(f"attn.{name}", (H, H), rng)
    s.ones("ln1.gamma", (H,))
    s.zeros("ln1.beta", (H,))
    s.weight("conv1.K", (k, H, F), rng)
    s.zeros("conv1.b", (F,))
    s.weight("conv2.K", (k, F, H), rng)
    s.zeros("conv2.b", (H,))
    s.ones("ln2.gamma", (H,))
    s.zeros("ln2.beta", (H,))


def _predictor_params(s, cfg, rng, with_embedding):
    H, C, k = cfg.hidden_dim, cfg.predictor_channels, cfg.predictor_kernel
    s.weight("conv1.K", (k, H, C), rng)
    s.zeros("conv1.b", (C,))
    s.ones("ln1.gamma", (C,))
    s.zeros("ln1.beta", (C,))
    s.weight("conv2.K", (k, C, C), rng)
    s.zeros("conv2.b", (C,))
    s.ones("ln2.gamma", (C,))
    s.zeros("ln2.beta", (C,))
    s.weight("fc.W", (C, 1), rng)
    s.zeros("fc.b", (1,))
    if with_embedding:
        s.weight("embed.K", (cfg.upsample_kernel, 1, H), rng)
        s.zeros("embed.b", (H,))


def _gru_params(s, din, H, rng):
    s.weight("W", (din, 3 * H), rng, fan_in=H)
    s.weight("U", (H, 3 * H), rng, fan_in=H)
    s.weight("b_ih", (3 * H,), rng, fan_in=H)
    s.weight("b_hh", (3 * H,), rng, fan_in=H)


def init_params(cfg, seed=0):
    """All trainable tensors of the model, deterministically initialized."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    root = store.scope("")
    H = cfg.hidden_dim
    enc = root.sub("encoder")
    enc.table("phoneme_table", (cfg.vocab_size, H), rng, std=1.0)
    for b in range(cfg.n_blocks):
        _fft_block_params(enc.sub(f"block{b}"), cfg, rng)
    ad = root.sub("adaptor")
    ad.table("speaker_table", (cfg.n_speakers, H), rng, std=0.3)
    ad.table("accent_table", (cfg.n_accents, cfg.accent_dim), rng, std=0.3)
    ad.weight("intensity.W", (1, cfg.intensity_dim), rng)
    ad.zeros("intensity.b", (cfg.intensity_dim,))
    _predictor_params(ad.sub("pitch"), cfg, rng, True)
    _predictor_params(ad.sub("energy"), cfg, rng, True)
    _predictor_params(ad.sub("duration"), cfg, rng, False)
    dec = root.sub("decoder")
    for b in range(cfg.n_blocks):
        _fft_block_params(dec.sub(f"block{b}"), cfg, rng)
    dec.weight("out.W", (H, cfg.mel_dim), rng)
    dec.zeros("out.b", (cfg.mel_dim,))
    ip = root.sub("intensity_predictor")
    _gru_params(ip.sub("gru_fwd"), cfg.mel_dim, cfg.gru_hidden, rng)
    _gru_params(ip.sub("gru_bwd"), cfg.mel_dim, cfg.gru_hidden, rng)
    ip.weight("fc.W", (2 * cfg.gru_hidden, 1), rng)
    ip.zeros("fc.b", (1,))
    return store


class _View:
    """Prefix-scoped read access into a ParamStore."""

    def __init__(self, store, prefix):
        self.store = store
        self.prefix = prefix

    def __getitem__(self, name):
        return self.store[f"{self.prefix}.{name}"]

    def sub(self, name):
        return _View(self.store, f"{self.prefix}.{name}")


# ---------------------------------------------------------------- building blocks

def fft_block(x, p, cfg, rng=None):
    """Self-attention and a two-layer convolution, each with residual + layer norm."""
    a = self_attention(x, cfg.n_heads, p["attn.Wq"], p["attn.Wk"], p["attn.Wv"], p["attn.Wo"])
    x = layer_norm(x + dropout(a, cfg.dropout, rng), p["ln1.gamma"], p["ln1.beta"])
    h = relu(conv1d(x, p["conv1.K"], p["conv1.b"]))
    h = conv1d(h, p["conv2.K"], p["conv2.b"])
    return layer_norm(x + dropout(h, cfg.dropout, rng), p["ln2.gamma"], p["ln2.beta"])


def variance_predictor(x, p, cfg, rng=None):
    """Two conv/ReLU/LN/dropout layers and a projection to one scalar per phoneme."""
    h = relu(conv1d(x, p["conv1.K"], p["conv1.b"]))
    h = dropout(layer_norm(h, p["ln1.gamma"], p["ln1.beta"]), cfg.dropout, rng)
    h = relu(conv1d(h, p["conv2.K"], p["conv2.b"]))
    h = dropout(layer_norm(h, p["ln2.gamma"], p["ln2.beta"]), cfg.dropout, rng)
    out = linear(h, p["fc.W"], p["fc.b"])
    return out.reshape((x.shape[0],))


def upsample_scalar(values, p):
    """Scalar-per-phoneme sequence to a [T, hidden] embedding with one wide convolution."""
    values = as_tensor(values)
    return conv1d(values.reshape((values.shape[0], 1)), p["embed.K"], p["embed.b"])


def length_regulate(h, durations):
    """Repeat row ``t`` of ``h`` ``durations[t]`` times."""
    durations = np.asarray(durations, dtype=np.int64)
    if durations.shape != (h.shape[0],) or np.any(durations < 1):
        raise ShapeError(f"need one positive duration per row: {durations.shape} vs {h.shape[0]} rows")
    return take_rows(h, np.repeat(np.arange(h.shape[0]), durations))


def durations_from_log(log_d):
    """Rounded frame counts from log(1 + d) predictions, at least one frame each."""
    return np.maximum(1, np.rint(np.expm1(np.asarray(log_d, dtype=np.float64)))).astype(np.int64)


# ---------------------------------------------------------------- model stages

def encode_text(phoneme_ids, params, cfg, rng=None):
    ids = np.asarray(phoneme_ids, dtype=np.intp)
    if ids.ndim != 1 or ids.size == 0:
        raise EmptyInput("phoneme sequence must be non-empty")
    p = _View(params, "encoder")
    x = take_rows(params["encoder.phoneme_table"], ids) + sinusoid_positions(ids.size, cfg.hidden_dim)
    x = dropout(x, cfg.dropout, rng)
    for b in range(cfg.n_blocks):
        x = fft_block(x, p.sub(f"block{b}"), cfg, rng)
    return x


def accent_variance_adaptor(H, speaker_id, accent_id, intensity, params, cfg,
                            durations=None, pitch_target=None, energy_target=None, rng=None):
    """Inject speaker/accent/intensity and predict phoneme prosody.

    With ``durations`` the length regulator uses them (training); otherwise it
    uses the rounded predictions. Pitch and energy embeddings are built from
    the targets when given and from the predictions otherwise.
    """
    check_intensity(intensity)
    spk = _index(cfg.n_speakers, speaker_id, "speaker id")
    acc = _index(cfg.n_accents, accent_id, "accent id")
    p = _View(params, "adaptor")
    T = H.shape[0]
    e_s = take_rows(p["speaker_table"], [spk])
    e_a = take_rows(p["accent_table"], [acc])
    i = as_tensor(intensity).reshape((1, 1))
    e_i = linear(i, p["intensity.W"], p["intensity.b"])
    H1 = H + e_s + concat([e_a, e_i], axis=-1)
    pitch_pred = variance_predictor(H1, p.sub("pitch"), cfg, rng)
    energy_pred = variance_predictor(H1, p.sub("energy"), cfg, rng)
    log_dur = variance_predictor(H1, p.sub("duration"), cfg, rng)
    pe = upsample_scalar(pitch_pred if pitch_target is None else pitch_target, p.sub("pitch"))
    ee = upsample_scalar(energy_pred if energy_target is None else energy_target, p.sub("energy"))
    H2 = H1 + pe + ee
    d = durations_from_log(log_dur.data) if durations is None else np.asarray(durations, dtype=np.int64)
    if d.shape != (T,):
        raise ShapeError(f"{d.size} durations for {T} phonemes")
    return AdaptorOutput(H2, pitch_pred, energy_pred, log_dur, pe, ee, length_regulate(H2, d), d)


def decode_mel(H_fm, params, cfg, rng=None):
    if H_fm.shape[0] == 0:
        raise EmptyInput("no frames to decode")
    p = _View(params, "decoder")
    x = H_fm + sinusoid_positions(H_fm.shape[0], cfg.hidden_dim)
    for b in range(cfg.n_blocks):
        x = fft_block(x, p.sub(f"block{b}"), cfg, rng)
    return linear(x, p["out.W"], p["out.b"])


def predict_intensity(mel, params, cfg):
    """Scalar intensity in (0, 1) read from a [frames, mel_dim] sequence."""
    mel = as_tensor(mel)
    if mel.ndim != 2 or mel.shape[0] == 0:
        raise EmptyInput("intensity predictor needs at least one mel frame")
    p = _View(params, "intensity_predictor")
    fwd = tuple(p[f"gru_fwd.{n}"] for n in ("W", "U", "b_ih", "b_hh"))
    bwd = tuple(p[f"gru_bwd.{n}"] for n in ("W", "U", "b_ih", "b_hh"))
    _, hf, hb = bigru(mel, np.zeros(cfg.gru_hidden), fwd, bwd)
    h = concat([hf, hb], axis=-1).reshape((1, 2 * cfg.gru_hidden))
    return sigmoid(linear(h, p["fc.W"], p["fc.b"])).reshape(())


# ---------------------------------------------------------------- losses and top-level passes

@dataclass
class Targets:
    """Training targets for one utterance (prosody scalars already normalized)."""

    phoneme_ids: np.ndarray
    speaker_id: int
    accent_id: int
    intensity: float
    durations: np.ndarray
    pitch: np.ndarray
    energy: np.ndarray
    mel: np.ndarray

    def __post_init__(self):
        self.phoneme_ids = np.asarray(self.phoneme_ids, dtype=np.intp)
        self.durations = np.asarray(self.durations, dtype=np.int64)
        self.pitch = np.asarray(self.pitch, dtype=np.float64)
        self.energy = np.asarray(self.energy, dtype=np.float64)
        self.mel = np.asarray(self.mel, dtype=np.float64)
        T = self.phoneme_ids.size
        if not (self.durations.shape == self.pitch.shape == self.energy.shape == (T,)):
            raise ShapeError("phoneme-level targets must all have one value per phoneme")
        if self.mel.shape[0] != self.durations.sum():
            raise ShapeError(f"mel has {self.mel.shape[0]} frames, durations sum to {self.durations.sum()}")
        check_intensity(self.intensity)


@dataclass
class Predictions:
    mel: Tensor
    log_duration: Tensor
    pitch: Tensor
    energy: Tensor
    intensity: Tensor
    adaptor: AdaptorOutput | None = None


def total_loss(pred, targets, intended_intensity, use_cc=True):
    """Composite loss; ``use_cc=False`` replaces the consistency term by a constant 0."""
    l_mel = mse_loss(pred.mel, as_tensor(targets.mel))
    l_dur = mse_loss(pred.log_duration, as_tensor(np.log1p(targets.durations.astype(np.float64))))
    l_pitch = mse_loss(pred.pitch, as_tensor(targets.pitch))
    l_energy = mse_loss(pred.energy, as_tensor(targets.energy))
    i = as_tensor(intended_intensity)
    if pred.intensity.shape != i.shape:
        raise ShapeError(f"intensity shapes differ: {pred.intensity.shape} vs {i.shape}")
    l_cc = mse_loss(pred.intensity, i) if use_cc else Tensor(0.0)
    l_final = l_mel + l_dur + l_pitch + l_energy + l_cc
    return Losses(l_mel, l_dur, l_pitch, l_energy, l_cc, l_final)


def forward_train(t, params, cfg, rng=None, cc_intensity=None):
    """Teacher-forced pass on one utterance.

    The mel, duration, pitch and energy predictions are made at the labeled
    intensity. The intensity estimate comes from the same mel unless
    ``cc_intensity`` is given, in which case a second adaptor/decoder pass is
    run at that intensity (ground-truth durations, predicted pitch and energy)
    and the estimate is read from its mel. Returns ``(predictions, intended)``.
    """
    H = encode_text(t.phoneme_ids, params, cfg, rng)
    ad = accent_variance_adaptor(H, t.speaker_id, t.accent_id, t.intensity, params, cfg,
                                 durations=t.durations, pitch_target=t.pitch,
                                 energy_target=t.energy, rng=rng)
    mel = decode_mel(ad.frames, params, cfg, rng)
    if cc_intensity is None:
        intended = t.intensity
        cc_mel = mel
    else:
        intended = cc_intensity
        ad_cc = accent_variance_adaptor(H, t.speaker_id, t.accent_id, cc_intensity, params, cfg,
                                        durations=t.durations, rng=rng)
        cc_mel = decode_mel(ad_cc.frames, params, cfg, rng)
    i_hat = predict_intensity(cc_mel, params, cfg)
    return Predictions(mel, ad.log_duration_pred, ad.pitch_pred, ad.energy_pred, i_hat, ad), intended


def utterance_loss(t, params, cfg, rng=None, use_cc=True, cc_intensity=None):
    pred, intended = forward_train(t, params, cfg, rng, cc_intensity=cc_intensity if use_cc else None)
    return total_loss(pred, t, np.float64(intended), use_cc=use_cc)


def synthesize(req, params, cfg, return_details=False):
    """Evaluation-mode synthesis from predicted durations, pitch and energy."""
    H = encode_text(req.phoneme_ids, params, cfg)
    ad = accent_variance_adaptor(H, req.speaker_id, req.accent_id, req.intensity, params, cfg)
    mel = decode_mel(ad.frames, params, cfg)
    if return_details:
        return mel.data, ad
    return mel.data


__all__ = [
    "AdaptorOutput",
    "Losses",
    "ModelConfig",
    "Predictions",
    "SynthesisRequest",
    "Targets",
    "accent_variance_adaptor",
    "check_intensity",
    "decode_mel",
    "durations_from_log",
    "encode_text",
    "fft_block",
    "forward_train",
    "init_params",
    "length_regulate",
    "predict_intensity",
    "synthesize",
    "total_loss",
    "upsample_scalar",
    "utterance_loss",
    "variance_predictor",
]
