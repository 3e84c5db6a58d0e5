"""Evaluation runs: synthesize held-out utterances and score them against references.

No vocoder is involved. Frame-level pitch and energy of a synthesized
utterance are the model's phoneme-level predictions (denormalized) repeated
over the predicted durations; predicted pitch below the tracker's lower bound
counts as unvoiced.
"""
import numpy as np

from . import dsp
from .metrics import (
    EvalReport,
    diagonal_mass,
    duration_boundary_delta,
    energy_mae_dtw,
    intensity_confusion,
    mcd_dtw,
    pitch_dtw,
    pitch_moments,
)
from .model import SynthesisRequest, predict_intensity, synthesize

SWEEP = tuple(np.round(np.arange(1, 10) / 10.0, 1))


def intensity_sweep(targets, params, cfg, levels=SWEEP):
    """``[(intended, predicted)]`` from synthesizing every target at every level."""
    pairs = []
    for t in targets:
        for i in levels:
            mel = synthesize(SynthesisRequest(t.phoneme_ids, t.speaker_id, t.accent_id, float(i)), params, cfg)
            pairs.append((float(i), float(predict_intensity(mel, params, cfg).data)))
    return pairs


def _frame_prosody(ad, stats_pitch, stats_energy, audio_cfg):
    pitch = stats_pitch.denormalize(ad.pitch_pred.data)
    pitch = np.where(pitch >= audio_cfg.pitch_fmin, pitch, 0.0)
    energy = stats_energy.denormalize(ad.energy_pred.data)
    return np.repeat(pitch, ad.durations), np.repeat(energy, ad.durations)


def evaluate(manifest, records, training_set_meta, params, cfg, audio_cfg=None, levels=SWEEP):
    """Score ``records`` (labeled L2) against their reference audio.

    ``training_set_meta`` supplies the normalization statistics and id tables
    stored in the checkpoint.
    """
    audio_cfg = audio_cfg or dsp.AudioConfig()
    sp = dsp.NormStats(**training_set_meta["pitch_stats"])
    se = dsp.NormStats(**training_set_meta["energy_stats"])
    speakers, accents = training_set_meta["speakers"], training_set_meta["accents"]
    mcds, pdtws, maes, deltas, pooled = [], [], [], [], []
    targets = []
    for r in records:
        w = manifest.waveform(r, audio_cfg)
        spec = dsp.stft(w, audio_cfg)
        mel_ref = dsp.mel_spectrogram(w, audio_cfg, spec)
        pitch_ref = dsp.extract_pitch(w, audio_cfg)
        energy_ref = dsp.frame_energy(spec)
        spk, acc = speakers.index(r.speaker_id), accents.index(r.accent_id)
        req = SynthesisRequest(r.phoneme_ids, spk, acc, r.intensity_label)
        mel, ad = synthesize(req, params, cfg, return_details=True)
        pitch, energy = _frame_prosody(ad, sp, se, audio_cfg)
        mcds.append(mcd_dtw(mel, mel_ref))
        if np.any(pitch > 0) and np.any(pitch_ref > 0):
            pdtws.append(pitch_dtw(pitch, pitch_ref))
        maes.append(energy_mae_dtw(energy, energy_ref))
        deltas.append(duration_boundary_delta(ad.durations, r.durations, audio_cfg.frame_shift))
        pooled.append(pitch)
        targets.append(req)
    sigma, skew, kurt = pitch_moments(np.concatenate(pooled))
    pairs = intensity_sweep(targets, params, cfg, levels)
    coarse = intensity_confusion(pairs)
    fine = intensity_confusion(pairs, fine=True)
    return EvalReport(
        mcd_db=float(np.mean(mcds)),
        pitch_sigma=sigma,
        pitch_skewness=skew,
        pitch_kurtosis=kurt,
        pitch_dtw=float(np.mean(pdtws)) if pdtws else 0.0,
        energy_mae=float(np.mean(maes)),
        duration_delta_ms=float(np.mean(deltas)),
        confusion_coarse=coarse,
        confusion_fine=fine,
        diagonal_coarse=diagonal_mass(coarse),
        diagonal_fine=diagonal_mass(fine),
        n_utterances=len(records),
        extra={"sweep": [[a, b] for a, b in pairs]},
    )
