import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accent_tts.cli import gradient_check
from accent_tts.errors import ConfigError, EmptyInput, IntensityRange, ParseError, ShapeError
from accent_tts.model import (
    ModelConfig,
    Predictions,
    SynthesisRequest,
    Targets,
    accent_variance_adaptor,
    decode_mel,
    durations_from_log,
    encode_text,
    forward_train,
    init_params,
    length_regulate,
    predict_intensity,
    synthesize,
    total_loss,
    utterance_loss,
)
from accent_tts.nn import Adam, Tensor, mse_loss, sinusoid_positions
from accent_tts.train import load_checkpoint, save_checkpoint


@pytest.fixture(scope="module")
def small_cfg():
    return ModelConfig(n_blocks=1, hidden_dim=16, n_heads=2, ffn_dim=16, accent_dim=8, intensity_dim=8,
                       predictor_channels=16, gru_hidden=8, mel_dim=10, n_speakers=3, n_accents=2)


def toy_targets(cfg, seed=0, n_ph=5, intensity=0.4):
    r = np.random.default_rng(seed)
    d = r.integers(1, 4, size=n_ph)
    return Targets(r.integers(0, cfg.vocab_size, size=n_ph), 1, 1, intensity, d,
                   r.normal(size=n_ph), r.normal(size=n_ph), r.normal(size=(int(d.sum()), cfg.mel_dim)))


# ---------------------------------------------------------------- configuration

def test_full_preset_dimensions():
    cfg = ModelConfig.full()
    assert (cfg.n_blocks, cfg.hidden_dim, cfg.mel_dim, cfg.gru_hidden) == (6, 256, 80, 128)
    assert cfg.accent_dim + cfg.intensity_dim == cfg.hidden_dim == 256
    p = init_params(cfg)
    assert p["adaptor.speaker_table"].shape == (14, 256)
    assert p["adaptor.accent_table"].shape == (6, 128)
    assert p["adaptor.intensity.W"].shape == (1, 128)
    assert p["adaptor.pitch.embed.K"].shape[0] == 9


def test_config_invariant_enforced():
    with pytest.raises(ConfigError):
        ModelConfig(accent_dim=40, intensity_dim=32)
    with pytest.raises(ConfigError):
        ModelConfig(n_heads=3)
    with pytest.raises(ConfigError):
        ModelConfig(conv_kernel=4)
    with pytest.raises(ConfigError):
        ModelConfig(dropout=1.0)
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"hidden": 3})
    cfg = ModelConfig.desk()
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_param_names_cover_architecture(small_cfg):
    names = init_params(small_cfg).names()
    assert len(names) == len(set(names))
    for prefix in ("encoder.", "adaptor.", "decoder.", "intensity_predictor."):
        assert any(n.startswith(prefix) for n in names)


# ---------------------------------------------------------------- encoder

def test_encode_shapes_and_positions(small_cfg):
    p = init_params(small_cfg, seed=1)
    assert encode_text([4], p, small_cfg).shape == (1, 16)
    H = encode_text([7, 7, 7], p, small_cfg).data
    assert not np.allclose(H[0], H[1])
    assert not np.allclose(H[1], H[2])
    np.testing.assert_array_equal(sinusoid_positions(1, 16).data[0], [0, 1] * 8)
    with pytest.raises(IndexError):
        encode_text([small_cfg.vocab_size], p, small_cfg)
    with pytest.raises(EmptyInput):
        encode_text([], p, small_cfg)


# ---------------------------------------------------------------- adaptor

def test_length_regulator_rows(small_cfg):
    p = init_params(small_cfg)
    H = encode_text([1, 2, 3], p, small_cfg)
    ad = accent_variance_adaptor(H, 0, 1, 0.5, p, small_cfg, durations=[2, 3, 1])
    F, Hh = ad.frames.data, ad.hidden.data
    assert F.shape == (6, 16)
    np.testing.assert_array_equal(F[[0, 1]], Hh[[0, 0]])
    np.testing.assert_array_equal(F[[2, 3, 4]], Hh[[1, 1, 1]])
    np.testing.assert_array_equal(F[5], Hh[2])
    with pytest.raises(ShapeError):
        length_regulate(H, [1, 0, 2])


def test_intensity_changes_prosody_only_through_intensity_slot(small_cfg):
    p = init_params(small_cfg, seed=2)
    H = encode_text([5, 9, 12, 3], p, small_cfg)
    lo = accent_variance_adaptor(H, 2, 0, 0.1, p, small_cfg, durations=[1, 1, 1, 1])
    hi = accent_variance_adaptor(H, 2, 0, 0.9, p, small_cfg, durations=[1, 1, 1, 1])
    assert np.max(np.abs(lo.pitch_embedding.data - hi.pitch_embedding.data)) > 0
    assert np.max(np.abs(lo.energy_embedding.data - hi.energy_embedding.data)) > 0
    assert np.max(np.abs(lo.pitch_pred.data - hi.pitch_pred.data)) > 0
    # removing p and e leaves H + E_spk + [E_acc, E_int]; only the E_int columns may move
    base_lo = lo.hidden.data - lo.pitch_embedding.data - lo.energy_embedding.data
    base_hi = hi.hidden.data - hi.pitch_embedding.data - hi.energy_embedding.data
    a = small_cfg.accent_dim
    np.testing.assert_allclose(base_lo[:, :a], base_hi[:, :a], atol=1e-12)
    assert np.max(np.abs(base_lo[:, a:] - base_hi[:, a:])) > 0


def test_adaptor_input_validation(small_cfg):
    p = init_params(small_cfg)
    H = encode_text([1, 2], p, small_cfg)
    for bad in (0.0, 1.0, 1.5, -0.2):
        with pytest.raises(IntensityRange):
            accent_variance_adaptor(H, 0, 0, bad, p, small_cfg)
    with pytest.raises(IndexError):
        accent_variance_adaptor(H, 3, 0, 0.5, p, small_cfg)
    with pytest.raises(IndexError):
        accent_variance_adaptor(H, 0, 2, 0.5, p, small_cfg)


def test_duration_rounding():
    d = durations_from_log(np.log1p([0.0, 0.4, 2.6, 7.0, -0.9]))
    assert d.tolist() == [1, 1, 3, 7, 1]


# ---------------------------------------------------------------- decoder and intensity predictor

def test_decode_full_width():
    cfg = ModelConfig.full()
    p = init_params(cfg)
    mel = decode_mel(Tensor(np.random.default_rng(0).normal(size=(6, 256))), p, cfg)
    assert mel.shape == (6, 80)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 12), st.floats(0.1, 10.0), st.integers(0, 10**6))
def test_decode_finite_and_deterministic(frames, scale, seed):
    cfg = ModelConfig(n_blocks=1, hidden_dim=8, n_heads=2, ffn_dim=8, accent_dim=4, intensity_dim=4,
                      predictor_channels=8, gru_hidden=4, mel_dim=6)
    p = init_params(cfg, seed=seed % 7)
    x = Tensor(np.random.default_rng(seed).normal(size=(frames, 8)) * scale)
    a = decode_mel(x, p, cfg).data
    b = decode_mel(x, p, cfg).data
    assert np.all(np.isfinite(a))
    np.testing.assert_array_equal(a, b)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 15), st.floats(0.01, 100.0), st.integers(0, 10**6))
def test_intensity_predictor_range(frames, scale, seed):
    cfg = ModelConfig(n_blocks=1, hidden_dim=8, n_heads=2, ffn_dim=8, accent_dim=4, intensity_dim=4,
                      predictor_channels=8, gru_hidden=4, mel_dim=6)
    p = init_params(cfg, seed=1)
    mel = np.random.default_rng(seed).normal(size=(frames, 6)) * scale
    v = float(predict_intensity(mel, p, cfg).data)
    assert 0.0 < v < 1.0


def test_intensity_predictor_zero_head(small_cfg):
    p = init_params(small_cfg)
    p["intensity_predictor.fc.W"].data[:] = 0.0
    p["intensity_predictor.fc.b"].data[:] = 0.0
    assert float(predict_intensity(np.ones((4, 10)), p, small_cfg).data) == 0.5
    with pytest.raises(EmptyInput):
        predict_intensity(np.zeros((0, 10)), p, small_cfg)


# ---------------------------------------------------------------- losses

def perfect_predictions(t, intensity):
    return Predictions(Tensor(t.mel), Tensor(np.log1p(t.durations.astype(float))), Tensor(t.pitch),
                       Tensor(t.energy), Tensor(np.float64(intensity)))


def test_loss_zero_at_targets(small_cfg):
    t = toy_targets(small_cfg)
    losses = total_loss(perfect_predictions(t, 0.4), t, np.float64(0.4))
    assert all(v == 0.0 for v in losses.values().values())


def test_loss_consistency_only(small_cfg):
    t = toy_targets(small_cfg)
    losses = total_loss(perfect_predictions(t, 0.6), t, np.float64(0.4))
    assert losses.l_final.item() == pytest.approx(0.04, abs=1e-15)
    assert losses.l_mel.item() == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_loss_sum_exact(seed):
    cfg = ModelConfig(n_blocks=1, hidden_dim=8, n_heads=2, ffn_dim=8, accent_dim=4, intensity_dim=4,
                      predictor_channels=8, gru_hidden=4, mel_dim=6, n_speakers=2, n_accents=2)
    t = toy_targets(cfg, seed)
    v = utterance_loss(t, init_params(cfg, seed=seed % 5), cfg).values()
    assert v["l_final"] == v["l_mel"] + v["l_dur"] + v["l_p_pitch"] + v["l_p_energy"] + v["l_cc"]


def test_loss_shape_mismatch(small_cfg):
    t = toy_targets(small_cfg)
    pred = perfect_predictions(t, 0.4)
    pred.mel = Tensor(np.zeros((1, small_cfg.mel_dim)))
    with pytest.raises(ShapeError):
        total_loss(pred, t, np.float64(0.4))
    with pytest.raises(ShapeError):
        Targets([1, 2], 0, 0, 0.5, [1, 1], [0.0], [0.0, 0.0], np.zeros((2, 3)))


def test_ablation_has_constant_consistency_term(small_cfg):
    t = toy_targets(small_cfg)
    p = init_params(small_cfg)
    losses = utterance_loss(t, p, small_cfg, use_cc=False)
    assert losses.l_cc.item() == 0.0
    p.zero_grad()
    losses.l_final.backward()
    assert all(np.all(p[n].grad == 0) if p[n].grad is not None else True
               for n in p.names() if n.startswith("intensity_predictor."))


# ---------------------------------------------------------------- gradients

def test_full_model_gradient_check():
    worst, report = gradient_check(seed=0)
    assert worst < 1e-4, max(report, key=report.get)


def test_full_model_gradient_check_label_pass(tiny_cfg):
    from accent_tts.nn import grad_check_params

    params = init_params(tiny_cfg, seed=4)
    r = np.random.default_rng(4)
    t = Targets([11, 30], 0, 1, 0.8, [3, 1], r.normal(size=2), r.normal(size=2), r.normal(size=(4, 6)))
    worst, _ = grad_check_params(lambda: utterance_loss(t, params, tiny_cfg).l_final, params,
                                 per_tensor=6)
    assert worst < 1e-4


def test_intensity_input_is_connected(small_cfg):
    p = init_params(small_cfg, seed=3)
    t = toy_targets(small_cfg, 3)
    i = Tensor(np.float64(0.3), requires_grad=True)
    H = encode_text(t.phoneme_ids, p, small_cfg)
    ad = accent_variance_adaptor(H, 0, 0, i, p, small_cfg, durations=t.durations)
    loss = mse_loss(decode_mel(ad.frames, p, small_cfg), Tensor(t.mel)) + mse_loss(ad.pitch_pred, Tensor(t.pitch))
    loss.backward()
    assert i.grad is not None and abs(float(i.grad)) > 0


@pytest.mark.parametrize("cc_intensity", [None, 0.75])
def test_consistency_gradient_reaches_generator(small_cfg, cc_intensity):
    p = init_params(small_cfg, seed=5)
    t = toy_targets(small_cfg, 5)
    losses = utterance_loss(t, p, small_cfg, cc_intensity=cc_intensity)
    p.zero_grad()
    losses.l_cc.backward()

    def norm(prefix):
        return sum(float(np.sum(p[n].grad ** 2)) for n in p.names()
                   if n.startswith(prefix) and p[n].grad is not None)

    assert norm("decoder.") > 0
    assert norm("adaptor.") > 0
    assert norm("encoder.") > 0


def test_every_parameter_receives_gradient(small_cfg):
    p = init_params(small_cfg, seed=6)
    t = toy_targets(small_cfg, 6)
    p.zero_grad()
    utterance_loss(t, p, small_cfg, cc_intensity=0.2).l_final.backward()
    missing = [n for n in p.names() if n not in ("encoder.phoneme_table", "adaptor.speaker_table",
                                                 "adaptor.accent_table")
               and (p[n].grad is None or not np.any(p[n].grad))]
    assert missing == []


def test_overfit_single_utterance_trend(small_cfg):
    cfg = dataclasses.replace(small_cfg, dropout=0.0)
    p = init_params(cfg, seed=0)
    t = toy_targets(cfg, 8)
    opt = Adam(p, cfg.hidden_dim, warmup=100)
    vals = []
    for _ in range(60):
        p.zero_grad()
        loss = utterance_loss(t, p, cfg).l_final
        loss.backward()
        opt.step()
        vals.append(loss.item())
    ma = np.convolve(vals, np.ones(10) / 10, mode="valid")[:41]
    assert np.all(np.diff(ma) < 0)
    assert all(np.isfinite(vals))


# ---------------------------------------------------------------- synthesis and checkpoints

def test_synthesize_determinism_and_frames(small_cfg):
    p = init_params(small_cfg, seed=9)
    req = SynthesisRequest([3, 8, 21, 30], 1, 0, 0.5)
    mel, ad = synthesize(req, p, small_cfg, return_details=True)
    np.testing.assert_array_equal(mel, synthesize(req, p, small_cfg))
    assert mel.shape == (int(ad.durations.sum()), small_cfg.mel_dim)
    assert np.all(ad.durations >= 1)
    other = synthesize(SynthesisRequest([3, 8, 21, 30], 1, 0, 0.9), p, small_cfg)
    lo = synthesize(SynthesisRequest([3, 8, 21, 30], 1, 0, 0.1), p, small_cfg)
    assert lo.shape != other.shape or np.max(np.abs(lo - other)) > 0
    with pytest.raises(IntensityRange):
        SynthesisRequest([1], 0, 0, 1.5)


def test_forward_train_intended_intensity(small_cfg):
    p = init_params(small_cfg)
    t = toy_targets(small_cfg)
    _, intended = forward_train(t, p, small_cfg)
    assert intended == t.intensity
    _, intended = forward_train(t, p, small_cfg, cc_intensity=0.85)
    assert intended == 0.85


def test_checkpoint_round_trip(tmp_path, small_cfg):
    p = init_params(small_cfg, seed=11)
    path = tmp_path / "m.cait"
    save_checkpoint(path, p, small_cfg, step=17, extra={"speakers": ["a"]})
    raw = path.read_bytes()
    assert raw[:4] == b"CAIT"
    q, cfg, meta = load_checkpoint(path)
    assert cfg == small_cfg and meta["step"] == 17 and meta["speakers"] == ["a"]
    for n in p.names():
        np.testing.assert_array_equal(p[n].data, q[n].data)
    (tmp_path / "bad").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ParseError):
        load_checkpoint(tmp_path / "bad")
    (tmp_path / "short").write_bytes(raw[:-8])
    with pytest.raises(ParseError):
        load_checkpoint(tmp_path / "short")
    (tmp_path / "long").write_bytes(raw + b"\0")
    with pytest.raises(ParseError):
        load_checkpoint(tmp_path / "long")
