"""Command-line entry point: ``lifas <subcommand> ...``.

Exit codes: 0 success, 2 bad usage or input, 1 internal error. Every
subcommand that takes ``--config`` reads a flat JSON object whose keys match
the long flags (``--batch-size`` <-> ``batch_size``); flags override the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset, evaluation, synth
from .audio_io import read_wav, resample
from .augment import AugmentPolicy
from .dsp import SpectrogramConfig, image_to_pgm, melspectrogram, render_image, spectrogram_to_csv
from .errors import LifasError
from .fileio import atomic_write_bytes, atomic_write_text
from .nn import checkpoint
from .nn.model import ModelSpec, init_model, model_forward
from .nn.ops import softmax
from .train import OneCycleSchedule, TrainConfig, fit, from_config, steps_per_epoch

log = logging.getLogger("lifas")

SPECTRO_FLAGS = {
    "sample_rate_hz": int, "n_fft": int, "hop_samples": int, "n_mels": int, "fmin_hz": float,
    "fmax_hz": float, "power_exponent": float, "top_db": float, "image_width_px": int,
    "image_height_px": int,
}
TRAIN_FLAGS = {"epochs": int, "batch_size": int, "momentum": float, "weight_decay": float,
               "seed": int, "clip_len_samples": int}
SCHEDULE_FLAGS = {"max_lr": float, "warmup_frac": float, "start_div": float, "final_div": float}
AUGMENT_FLAGS = {"freq_mask_param": int, "time_mask_param": int, "n_freq_masks": int,
                 "n_time_masks": int, "mask_fill": str}
MODEL_FLAGS = {"stem_channels": int, "stem_stride": int, "stem_pool": int}


def _add_flags(parser, table):
    for key, typ in table.items():
        parser.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None)


def _load_config(args) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise LifasError(f"cannot read config {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise LifasError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise LifasError(f"config {args.config} must hold a JSON object")
    for key, value in vars(args).items():
        if value is not None:
            cfg[key] = value
    return cfg


def cmd_spectrogram(args) -> int:
    cfg = _load_config(args)
    config = from_config(SpectrogramConfig, cfg)
    clip = read_wav(args.input)
    if clip.sample_rate_hz != config.sample_rate_hz:
        clip = resample(clip, config.sample_rate_hz)
    if len(clip) < config.n_fft:
        raise LifasError(f"{args.input}: {len(clip)} samples is shorter than n_fft={config.n_fft}")
    spec = melspectrogram(clip.samples, config)
    if args.csv:
        atomic_write_text(args.csv, spectrogram_to_csv(spec))
    if args.pgm:
        atomic_write_bytes(args.pgm, image_to_pgm(render_image(spec)))
    print(f"{spec.shape[0]} x {spec.shape[1]}")
    return 0


def cmd_synth(args) -> int:
    task = synth.SyntheticTaskSpec.load(args.task)
    manifest = synth.generate(task, args.out_dir)
    print(f"wrote {len(manifest.entries)} clips in {len(manifest.labels)} classes to {args.out_dir}")
    return 0


def cmd_ingest(args) -> int:
    manifest = dataset.ingest(args.root)
    out = args.out or str(Path(args.root) / "manifest.csv")
    manifest.save(out)
    print(f"{len(manifest.entries)} files, {len(manifest.labels)} languages -> {out}")
    return 0


def cmd_split(args) -> int:
    cfg = _load_config(args)
    for key in ("train_per_lang", "val_per_lang"):
        if key not in cfg:
            raise LifasError(f"--{key.replace('_', '-')} is required (flag or config key)")
    manifest = dataset.Manifest.load(args.manifest)
    out = dataset.split(manifest, cfg["train_per_lang"], cfg["val_per_lang"], cfg.get("seed", 0))
    out.save(args.out or args.manifest)
    for lang, n in out.counts("train").items():
        print(f"{lang}: train {n}, val {out.counts('val')[lang]}")
    return 0


def _policy(cfg) -> AugmentPolicy | None:
    policy = from_config(AugmentPolicy, cfg)
    return None if policy.is_identity else policy


def cmd_train(args) -> int:
    cfg = _load_config(args)
    manifest = dataset.Manifest.load(args.manifest)
    root = Path(args.manifest).parent
    spectro = from_config(SpectrogramConfig, cfg)
    tconf = from_config(TrainConfig, cfg)
    total = tconf.epochs * steps_per_epoch(manifest, tconf.batch_size)
    schedule = from_config(OneCycleSchedule, cfg, total_steps=total)
    model_kwargs = {k: cfg[k] for k in ("stage_channels", "blocks_per_stage") if k in cfg}
    spec = from_config(
        ModelSpec, {**cfg, **model_kwargs},
        n_classes=len(manifest.labels), labels=tuple(manifest.labels),
        input_dims=(1, spectro.image_height_px, spectro.image_width_px),
        spectrogram=spectro.to_dict(), clip_len_samples=tconf.clip_len_samples,
    )
    model = init_model(spec, tconf.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, history = fit(model, manifest, spectro, tconf, schedule, _policy(cfg), root=root,
                     checkpoint_dir=out_dir, single_threaded=args.single_threaded)
    history.save(out_dir)
    epoch, val_loss, val_acc = history.epochs[-1]
    print(f"trained {epoch} epochs, {len(history.steps)} steps; final val loss {val_loss:.4f}, "
          f"val accuracy {val_acc:.4f}")
    return 0


def _spectro_from_model(model) -> SpectrogramConfig:
    return SpectrogramConfig.from_dict(model.spec.spectrogram or {})


def cmd_eval(args) -> int:
    model = checkpoint.load(args.checkpoint)
    manifest = dataset.Manifest.load(args.manifest)
    if model.spec.labels and list(model.spec.labels) != manifest.labels:
        raise LifasError(f"checkpoint labels {list(model.spec.labels)} differ from manifest {manifest.labels}")
    cm, acc, _ = evaluation.evaluate(model, manifest, args.split, _spectro_from_model(model),
                                     root=Path(args.manifest).parent,
                                     single_threaded=args.single_threaded)
    if args.csv:
        atomic_write_text(args.csv, cm.to_csv())
    if args.json:
        atomic_write_text(args.json, evaluation.metrics_json(cm))
    sys.stdout.write(cm.to_text())
    print(f"accuracy {acc:.4f} over {cm.total} clips")
    return 0


def cmd_predict(args) -> int:
    model = checkpoint.load(args.checkpoint)
    config = _spectro_from_model(model)
    labels = list(model.spec.labels) or [str(i) for i in range(model.spec.n_classes)]
    clip_len = model.spec.clip_len_samples
    for path in args.wavs:
        clip = read_wav(path)
        if clip.sample_rate_hz != config.sample_rate_hz:
            clip = resample(clip, config.sample_rate_hz)
        if len(clip) < clip_len:
            raise LifasError(f"{path}: {len(clip)} samples, need {clip_len}")
        img = render_image(melspectrogram(clip.samples[:clip_len], config)).astype(np.float32)
        probs = softmax(model_forward(model, img[None, None], "eval"))[0]
        best = int(np.argmax(probs))
        detail = " ".join(f"{l}={p:.4f}" for l, p in zip(labels, probs))
        print(f"{path}\t{labels[best]}\t{detail}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lifas", description=__doc__.splitlines()[0])
    parser.add_argument("--single-threaded", action="store_true",
                        help="no worker threads; bitwise-reproducible runs")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrogram", help="WAV -> mel spectrogram CSV / PGM image")
    p.add_argument("input")
    p.add_argument("--pgm")
    p.add_argument("--csv")
    p.add_argument("--config")
    _add_flags(p, SPECTRO_FLAGS)
    p.set_defaults(func=cmd_spectrogram)

    p = sub.add_parser("synth", help="generate a synthetic corpus from a task JSON")
    p.add_argument("task")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="scan <root>/<language>/<session>/*.wav into a manifest")
    p.add_argument("root")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="speaker-disjoint train/val split of a manifest")
    p.add_argument("manifest")
    p.add_argument("-o", "--out")
    p.add_argument("--config")
    _add_flags(p, {"train_per_lang": int, "val_per_lang": int, "seed": int})
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model; writes checkpoints and history CSVs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config")
    for table in (SPECTRO_FLAGS, TRAIN_FLAGS, SCHEDULE_FLAGS, AUGMENT_FLAGS, MODEL_FLAGS):
        _add_flags(p, table)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="confusion matrix and accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="val", choices=dataset.SPLITS)
    p.add_argument("--csv")
    p.add_argument("--json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predicted language and class probabilities per WAV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("wavs", nargs="+")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LifasError, OSError, ValueError) as exc:
        print(f"lifas {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"lifas {args.command}: internal error: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
