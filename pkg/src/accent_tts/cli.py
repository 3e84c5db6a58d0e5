"""Command-line entry point: ``accent-tts <command> --out DIR [options]``.

Every command accepts ``--config FILE`` (JSON object of option values; flags
given on the command line take precedence) and writes the merged options to
``DIR/effective_config.json``. Running a command again with that file as its
config reproduces the run. Exit codes: 0 success, 1 domain error, 2 usage error.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from . import corpus as corpus_mod
from . import dsp
from .errors import AccentTTSError

log = logging.getLogger("accent_tts")

CONFIG_NAME = "effective_config.json"
NOT_ECHOED = {"command", "config", "out", "func", "verbose"}


# ---------------------------------------------------------------- argument types

def open_unit(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number in (0, 1), got {text!r}") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in the open interval (0, 1), got {v}")
    return v


def sweep_spec(text):
    try:
        a, b, c = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}") from None
    if c <= 0 or a > b:
        raise argparse.ArgumentTypeError("need start <= stop and step > 0")
    levels = np.round(np.arange(a, b + c / 2, c), 6)
    if levels.size == 0 or levels.min() <= 0 or levels.max() >= 1:
        raise argparse.ArgumentTypeError("sweep levels must lie in the open interval (0, 1)")
    return text


def positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def magnitudes(text):
    try:
        vals = [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals or min(vals) < 0 or not np.all(np.isfinite(vals)):
        raise argparse.ArgumentTypeError("magnitudes must be finite and non-negative")
    return text


def sweep_levels(text):
    a, b, c = (float(x) for x in text.split(":"))
    return [float(v) for v in np.round(np.arange(a, b + c / 2, c), 6)]


# ---------------------------------------------------------------- helpers

def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _audio_cfg(args):
    return dsp.AudioConfig(sample_rate=args.sample_rate)


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------- commands

def cmd_gen_corpus(args):
    spec = corpus_mod.SyntheticSpec(
        n_speakers=args.n_speakers,
        n_accents=args.n_accents,
        utterances_per_speaker=args.utterances_per_speaker,
        magnitude_scales=tuple(float(x) for x in args.magnitudes.split(",")),
        seed=args.seed,
    )
    cfg = _audio_cfg(args)
    m = corpus_mod.generate_synthetic_corpus(spec, cfg)
    if args.utterances_per_speaker >= 10:
        m = corpus_mod.split_corpus(m, seed=args.seed)
    corpus_mod.write_corpus(m, args.out, cfg)
    print(f"wrote {len(m.records)} recordings to {args.out}")


def cmd_extract_features(args):
    from .features import write_features_tsv

    cfg = _audio_cfg(args)
    m = corpus_mod.load_corpus(args.corpus, cfg)
    feats = corpus_mod.extract_features(m, cfg, jobs=args.jobs)
    write_features_tsv(os.path.join(args.out, "features_L1.tsv"), [f for f in feats if f.domain == "L1"])
    write_features_tsv(os.path.join(args.out, "features_L2.tsv"), [f for f in feats if f.domain == "L2"])
    print(f"wrote {len(feats)} feature vectors")


def cmd_train_ranker(args):
    from .features import read_features_tsv
    from .ranker import fit_all_accents, save_models

    l1 = read_features_tsv(os.path.join(args.features, "features_L1.tsv"), domain="L1")
    l2 = read_features_tsv(os.path.join(args.features, "features_L2.tsv"), domain="L2")
    models = fit_all_accents(l1, l2, C=args.C, k_factor=args.k_factor, seed=args.seed)
    save_models(os.path.join(args.out, "ranker.json"), models, args.seed, args.k_factor)
    for acc, mdl in models.items():
        print(f"{acc}: {mdl.solver_iterations} Newton steps, score range [{mdl.score_min:.4g}, {mdl.score_max:.4g}]")


def cmd_label_intensity(args):
    from .features import write_features_tsv
    from .ranker import load_models, save_models

    cfg = _audio_cfg(args)
    m = corpus_mod.load_corpus(args.corpus, cfg, manifest_name=corpus_mod.MANIFEST)
    if args.l1_dir:
        m = corpus_mod.attach_l1_dir(m, args.l1_dir, cfg)
    if args.ranker:
        models = load_models(args.ranker)
        missing = sorted({r.accent_id for r in m.records if r.domain == "L2"} - set(models))
        if missing:
            raise AccentTTSError(f"ranker has no model for accent(s) {', '.join(missing)}")
        feats = corpus_mod.extract_features(m, cfg, jobs=args.jobs)
        by_key = {(f.speaker_id, f.utterance_id): f for f in feats if f.domain == "L2"}
        labeled = m
        for r in m.records:
            if r.domain == "L2":
                r.intensity_label = models[r.accent_id].intensity(by_key[r.key])
        save_models(os.path.join(args.out, "ranker.json"), models, args.seed, args.k_factor)
    else:
        labeled, models, feats = corpus_mod.label_intensity(m, cfg, C=args.C, k_factor=args.k_factor,
                                                            seed=args.seed, jobs=args.jobs)
        save_models(os.path.join(args.out, "ranker.json"), models, args.seed, args.k_factor)
    # the labeled manifest points back at the source audio so the output is a loadable corpus root
    for r in labeled.records:
        if not os.path.isabs(r.wav_path):
            r.wav_path = os.path.relpath(os.path.join(args.corpus, r.wav_path), args.out)
    corpus_mod.write_manifest(os.path.join(args.out, corpus_mod.LABELED_MANIFEST), labeled.records)
    meta = dict(labeled.meta)
    if labeled.splits:
        meta["splits"] = {f"{k[0]}/{k[1]}": v for k, v in sorted(labeled.splits.items())}
    _dump(os.path.join(args.out, corpus_mod.META), meta)
    write_features_tsv(os.path.join(args.out, "features_L1.tsv"), [f for f in feats if f.domain == "L1"])
    write_features_tsv(os.path.join(args.out, "features_L2.tsv"), [f for f in feats if f.domain == "L2"])
    n = sum(r.intensity_label is not None for r in labeled.records)
    print(f"labeled {n} L2 recordings")


def _training_records(m, split, limit):
    recs = [r for r in m.records if r.domain == "L2" and r.intensity_label is not None]
    if split != "all" and m.splits:
        recs = [r for r in recs if m.splits.get(r.key) == split]
    if limit:
        recs = recs[:limit]
    return recs


def _model_cfg(args):
    from .model import ModelConfig

    overrides = dict(args.model or {})
    if args.dropout is not None:
        overrides["dropout"] = args.dropout
    return ModelConfig.full(**overrides) if args.preset == "full" else ModelConfig.desk(**overrides)


def cmd_train_tts(args):
    from .train import TrainConfig, build_training_set, norm_stats_meta, save_checkpoint, train

    cfg = _audio_cfg(args)
    m = corpus_mod.load_corpus(args.corpus, cfg)
    recs = _training_records(m, args.split, args.max_utterances)
    mc = _model_cfg(args)
    ts = build_training_set(m, recs, cfg, mc)
    tc = TrainConfig(steps=args.steps, batch_size=args.batch_size, warmup=args.warmup,
                     lr_scale=args.lr_scale, grad_clip=args.grad_clip, use_cc=not args.no_cc,
                     cc_sampling=args.cc_sampling, seed=args.seed, log_every=args.log_every)
    params, history = train(ts, mc, tc)
    extra = norm_stats_meta(ts)
    extra.update({"train_config": tc.to_dict(), "utterances": ts.utterance_ids,
                  "audio_config": cfg.to_dict()})
    save_checkpoint(os.path.join(args.out, "model.cait"), params, mc, step=tc.steps, extra=extra)
    _dump(os.path.join(args.out, "history.json"), history)
    last = history[-1] if history else {}
    print(f"trained {tc.steps} steps on {len(recs)} utterances; final l_final {last.get('l_final', float('nan')):.4f}")


def cmd_synthesize(args):
    from .corpus import phoneme_ids
    from .model import SynthesisRequest, predict_intensity, synthesize
    from .train import load_checkpoint

    params, mc, meta = load_checkpoint(args.checkpoint)
    speakers, accents = meta["speakers"], meta["accents"]
    items = []
    if args.phonemes:
        if args.speaker is None or args.accent is None:
            raise AccentTTSError("--phonemes needs --speaker and --accent")
        items.append(("utt", args.phonemes.split(), args.speaker, args.accent))
    else:
        m = corpus_mod.load_corpus(args.corpus, _audio_cfg(args))
        wanted = set(args.utterance or [])
        for r in m.records:
            if r.domain == "L2" and (not wanted or r.utterance_id in wanted):
                items.append((r.utterance_id, r.phonemes, r.speaker_id, r.accent_id))
        if not items:
            raise AccentTTSError("no matching L2 utterances")
    levels = sweep_levels(args.sweep) if args.sweep else [args.intensity]
    summary = []
    for name, phons, spk, acc in items:
        if spk not in speakers or acc not in accents:
            raise AccentTTSError(f"speaker {spk!r} or accent {acc!r} not in the checkpoint tables")
        for i in levels:
            req = SynthesisRequest(phoneme_ids(phons), speakers.index(spk), accents.index(acc), i)
            mel, ad = synthesize(req, params, mc, return_details=True)
            fname = f"{name}_i{i:.2f}.npy"
            np.save(os.path.join(args.out, fname), mel)
            summary.append({"utterance_id": name, "intensity": i, "file": fname,
                            "durations": ad.durations.tolist(),
                            "predicted_intensity": float(predict_intensity(mel, params, mc).data)})
    _dump(os.path.join(args.out, "synthesis.json"), summary)
    print(f"wrote {len(summary)} mel files")


def cmd_evaluate(args):
    from .evaluation import evaluate
    from .train import load_checkpoint

    cfg = _audio_cfg(args)
    params, mc, meta = load_checkpoint(args.checkpoint)
    m = corpus_mod.load_corpus(args.corpus, cfg)
    recs = [r for r in _training_records(m, args.split, args.max_utterances)
            if r.speaker_id in meta["speakers"] and r.accent_id in meta["accents"]]
    if not recs:
        raise AccentTTSError(f"no labeled L2 utterances in split {args.split!r}")
    report = evaluate(m, recs, meta, params, mc, cfg)
    report.write(os.path.join(args.out, "report.json"))
    print(f"MCD {report.mcd_db:.3f} dB, coarse diagonal {report.diagonal_coarse:.3f} over {len(recs)} utterances")


def cmd_plot(args):
    from . import plots

    made = []
    if args.history:
        plots.loss_curves(_load_json(args.history), os.path.join(args.out, "loss_curves.svg"))
        made.append("loss_curves.svg")
    if args.report:
        rep = _load_json(args.report)
        plots.confusion_heatmap(rep["confusion_coarse"], os.path.join(args.out, "confusion_coarse.svg"))
        plots.confusion_heatmap(rep["confusion_fine"], os.path.join(args.out, "confusion_fine.svg"), fine=True)
        made += ["confusion_coarse.svg", "confusion_fine.svg"]
    if args.corpus and args.utterance:
        cfg = _audio_cfg(args)
        m = corpus_mod.load_corpus(args.corpus, cfg)
        tracks = {}
        for r in m.records:
            if r.utterance_id == args.utterance:
                tracks[r.domain] = dsp.extract_pitch(m.waveform(r, cfg), cfg)
        if not tracks:
            raise AccentTTSError(f"utterance {args.utterance!r} not found")
        plots.pitch_contours(dict(sorted(tracks.items())), os.path.join(args.out, "pitch_contours.svg"),
                             cfg.frame_shift)
        made.append("pitch_contours.svg")
    if not made:
        raise AccentTTSError("nothing to plot: give --history, --report or --corpus with --utterance")
    print("wrote " + ", ".join(made))


def gradient_check(seed=0):
    """Worst relative error of the full training loss on a 2-phoneme, 4-frame toy instance."""
    from .model import ModelConfig, Targets, init_params, utterance_loss
    from .nn import grad_check_params

    cfg = ModelConfig(n_blocks=1, hidden_dim=8, n_heads=2, ffn_dim=8, accent_dim=4, intensity_dim=4,
                      predictor_channels=8, gru_hidden=4, mel_dim=6, n_speakers=2, n_accents=2,
                      dropout=0.0)
    params = init_params(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    t = Targets(phoneme_ids=[3, 17], speaker_id=1, accent_id=0, intensity=0.3, durations=[1, 3],
                pitch=rng.normal(size=2), energy=rng.normal(size=2), mel=rng.normal(size=(4, 6)))
    worst, report = grad_check_params(lambda: utterance_loss(t, params, cfg, cc_intensity=0.7).l_final, params)
    return worst, report


def cmd_grad_check(args):
    worst, report = gradient_check(args.seed)
    _dump(os.path.join(args.out, "gradcheck.json"), {"max_relative_error": worst, "per_tensor": report})
    print(f"max relative error {worst:.3e}")
    return 0 if worst < args.threshold else 1


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="accent-tts", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--out", required=True, help="output directory (created if missing)")
        sp.add_argument("--config", help="JSON file of option values")
        sp.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        sp.add_argument("--verbose", action="store_true", help="log progress to standard error")
        sp.set_defaults(func=func)
        return sp

    def audio(sp):
        sp.add_argument("--sample-rate", type=int, default=22050, help="analysis sample rate in Hz")

    def jobs(sp):
        sp.add_argument("--jobs", type=int, default=1, help="worker threads for feature extraction")

    def ranking(sp):
        sp.add_argument("--C", type=positive_float, default=1.0, help="slack penalty weight (default 1.0)")
        sp.add_argument("--k-factor", type=float, default=2.0,
                        help="random pairs per constraint set, as a multiple of L2 utterances (default 2)")

    sp = add("gen-corpus", cmd_gen_corpus, "generate a paired synthetic L1/L2 corpus")
    sp.add_argument("--n-speakers", type=int, default=4)
    sp.add_argument("--n-accents", type=int, default=2)
    sp.add_argument("--utterances-per-speaker", type=int, default=10)
    sp.add_argument("--magnitudes", type=magnitudes, default="0.2,0.5,1.0",
                    help="per-utterance perturbation scales, cycled (default 0.2,0.5,1.0)")
    audio(sp)

    sp = add("extract-features", cmd_extract_features, "compute accent feature vectors for a corpus")
    sp.add_argument("--corpus", required=True)
    audio(sp)
    jobs(sp)

    sp = add("train-ranker", cmd_train_ranker, "fit one ranking function per accent")
    sp.add_argument("--features", required=True, help="directory with features_L1.tsv and features_L2.tsv")
    ranking(sp)

    sp = add("label-intensity", cmd_label_intensity, "assign accent intensities to L2 recordings")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--ranker", help="reuse a ranker.json instead of fitting one")
    sp.add_argument("--l1-dir", help="directory of external L1 renditions named <utterance_id>.wav")
    ranking(sp)
    audio(sp)
    jobs(sp)

    sp = add("train-tts", cmd_train_tts, "train the acoustic model on a labeled corpus")
    sp.add_argument("--corpus", required=True, help="labeled corpus root")
    sp.add_argument("--split", default="train", choices=("train", "val", "test", "all"))
    sp.add_argument("--max-utterances", type=int, default=0, help="use only the first N utterances (0 = all)")
    sp.add_argument("--preset", default="desk", choices=("desk", "full"))
    sp.add_argument("--model", type=json.loads, default=None, help="JSON object of model config overrides")
    sp.add_argument("--dropout", type=float, default=None)
    sp.add_argument("--steps", type=int, default=2000)
    sp.add_argument("--batch-size", type=int, default=8)
    sp.add_argument("--warmup", type=int, default=4000)
    sp.add_argument("--lr-scale", type=positive_float, default=1.0)
    sp.add_argument("--grad-clip", type=positive_float, default=1.0)
    sp.add_argument("--no-cc", action="store_true", help="drop the consistency loss (ablation)")
    sp.add_argument("--cc-sampling", default="uniform", choices=("uniform", "label"))
    sp.add_argument("--log-every", type=int, default=100)
    audio(sp)

    sp = add("synthesize", cmd_synthesize, "generate mel-spectrograms at chosen intensities")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--intensity", type=open_unit, default=0.5, help="accent intensity in (0, 1)")
    sp.add_argument("--sweep", type=sweep_spec, help="start:stop:step, e.g. 0.1:0.9:0.1")
    sp.add_argument("--phonemes", help="space-separated ARPAbet sequence")
    sp.add_argument("--speaker")
    sp.add_argument("--accent")
    sp.add_argument("--corpus", help="synthesize the L2 utterances of this corpus")
    sp.add_argument("--utterance", action="append", help="restrict to these utterance ids")
    audio(sp)

    sp = add("evaluate", cmd_evaluate, "objective metrics and intensity confusion on a split")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    sp.add_argument("--max-utterances", type=int, default=0)
    audio(sp)

    sp = add("plot", cmd_plot, "render SVG figures")
    sp.add_argument("--history", help="history.json from train-tts")
    sp.add_argument("--report", help="report.json from evaluate")
    sp.add_argument("--corpus")
    sp.add_argument("--utterance")
    audio(sp)

    sp = add("grad-check", cmd_grad_check, "finite-difference check of the full training loss")
    sp.add_argument("--threshold", type=float, default=1e-4)
    return p, sub


def _subparser(sub, name):
    return sub.choices[name]


def _apply_config(parser, sub, argv):
    """Pre-parse ``--config`` and install its values as subcommand defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or known.command not in sub.choices:
        return
    sp = _subparser(sub, known.command)
    try:
        values = _load_json(known.config)
    except (OSError, json.JSONDecodeError) as exc:
        sp.error(f"--config: cannot read {known.config}: {exc}")
    if not isinstance(values, dict):
        sp.error("--config: expected a JSON object")
    values = {k.replace("-", "_"): v for k, v in values.items()}
    if values.pop("command", known.command) != known.command:
        sp.error("--config: file belongs to a different command")
    dests = {a.dest: a for a in sp._actions}
    unknown = sorted(set(values) - set(dests) - {"config", "help"})
    if unknown:
        sp.error(f"--config: unknown key(s) {', '.join(unknown)}")
    for k, v in values.items():
        action = dests[k]
        if action.type is not None and v is not None and action.type is not json.loads:
            try:
                v = action.type(str(v))
            except (argparse.ArgumentTypeError, ValueError) as exc:
                sp.error(f"argument --{k.replace('_', '-')}: {exc}")
        if action.choices is not None and v not in action.choices:
            sp.error(f"argument --{k.replace('_', '-')}: invalid choice {v!r}")
        action.default = v
        if action.required:
            action.required = False


def effective_config(args):
    d = {k: v for k, v in vars(args).items() if k not in NOT_ECHOED}
    d["command"] = args.command
    return d


def run(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, sub = build_parser()
    try:
        _apply_config(parser, sub, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        os.makedirs(args.out, exist_ok=True)
        _dump(os.path.join(args.out, CONFIG_NAME), effective_config(args))
        rc = args.func(args)
    except (AccentTTSError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return rc or 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
