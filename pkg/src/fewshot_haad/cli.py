"""``haad`` command line.

Every command writes its outputs and a resolved-config snapshot
(``<command>.config.json``) under ``--out``. Exit codes: 0 ok, 2 config or
manifest error, 3 contract error, 4 checkpoint/data mismatch, 5 divergence,
6 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import augment as aug
from . import config as cfgmod
from . import encoder as enc
from . import inference as inf
from . import motion as mo
from . import plotting
from . import trainer as tr
from .errors import CompatibilityError, ConfigError, HaadError
from .spectral import build_dct_basis

log = logging.getLogger("fewshot_haad")

IO_EXIT = 6


def _common(p):
    p.add_argument("--seed", type=int, help="global seed (default 0)")
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--out", default="runs", help="output directory (default: runs)")
    p.add_argument("-v", "--verbose", action="store_true")


def _aug_flags(p, ng_key):
    p.add_argument("--aug", dest="augment.kind", choices=cfgmod.CHOICES["augment.kind"])
    p.add_argument("--ng", dest=ng_key, type=int, help="generations per real sample")
    p.add_argument("--diffusion", help="diffusion checkpoint (needed for --aug diffusion)")
    p.add_argument("--sigma", dest="augment.sigma", type=float, help="perturbation jitter scale")
    p.add_argument("--observed", dest="augment.observed_len", type=int, help="observed frames O")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="haad", description="Few-shot human action anomaly detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus and manifest")
    _common(p)
    p.add_argument("--categories", dest="synth.categories", type=int)
    p.add_argument("--per-category", dest="synth.per_category", type=int)
    p.add_argument("--joints", dest="synth.joints", type=int)
    p.add_argument("--frames", dest="synth.frames", type=int)
    p.add_argument("--unseen", dest="synth.unseen", type=int, help="number of held-out categories")
    p.add_argument("--spec", help="corpus spec JSON (replaces the generated one)")

    p = sub.add_parser("pretrain-diffusion", help="train the motion-completion model")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--steps", dest="diffusion.steps", type=int)
    p.add_argument("--dct", dest="diffusion.dct_components", type=int)
    p.add_argument("--epochs", dest="diffusion.epochs", type=int)
    p.add_argument("--corpus", dest="diffusion.corpus", choices=cfgmod.CHOICES["diffusion.corpus"])

    p = sub.add_parser("train", help="contrastive encoder training")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--epochs", dest="train.epochs", type=int)
    p.add_argument("--hidden", dest="encoder.hidden_dim", type=int)
    p.add_argument("--temperature", dest="train.temperature", type=float)
    p.add_argument("--checkpoint-every", type=int, default=0, help="also save every N epochs")
    _aug_flags(p, "train.n_g")

    p = sub.add_parser("eval", help="few-shot AUC evaluation")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--support", dest="eval.n_s", type=int)
    p.add_argument("--trials", dest="eval.trials", type=int)
    p.add_argument("--metric", dest="eval.metric", choices=cfgmod.CHOICES["eval.metric"])
    _aug_flags(p, "eval.n_g")

    p = sub.add_parser("score", help="score one motion against a support directory")
    _common(p)
    p.add_argument("--encoder", required=True)
    p.add_argument("--support-dir", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--metric", dest="eval.metric", choices=cfgmod.CHOICES["eval.metric"])
    _aug_flags(p, "eval.n_g")

    p = sub.add_parser("sweep", help="evaluate over a (N_s, N_g, O) grid")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--trials", dest="eval.trials", type=int)
    p.add_argument("--ns", dest="sweep.n_s", type=int, nargs="+")
    p.add_argument("--ngs", dest="sweep.n_g", type=int, nargs="+")
    p.add_argument("--observed-lengths", dest="sweep.observed", type=int, nargs="+")
    p.add_argument("--aug", dest="augment.kind", choices=cfgmod.CHOICES["augment.kind"])
    p.add_argument("--diffusion")
    p.add_argument("--sigma", dest="augment.sigma", type=float)

    p = sub.add_parser("export-embeddings", help="write embeddings of manifest samples as CSV")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--splits", nargs="+", default=["test", "unseen-test"], choices=mo.SPLITS)
    return parser


# --------------------------------------------------------------------------


def _resolve(args) -> dict:
    flags = {k: v for k, v in vars(args).items() if "." in k}
    flags["seed"] = args.seed
    file_values = cfgmod.load_config_file(args.config) if args.config else {}
    return cfgmod.resolve(file_values, flags)


def _manifest(args, cfg) -> mo.DatasetManifest:
    return mo.load_manifest(args.manifest, center_root=cfg["data.center_root"])


def _augmenter(args, cfg, joints: int, frames: int):
    kind = cfg["augment.kind"]
    if kind == "none":
        return None
    o = cfg["augment.observed_len"]
    if not 0 <= o <= frames:
        raise ConfigError(f"augment.observed_len={o} outside [0, {frames}]")
    if kind == "perturb":
        return aug.PerturbationAugmenter(cfg["augment.sigma"], o)
    if not getattr(args, "diffusion", None):
        raise ConfigError("--aug diffusion needs --diffusion <checkpoint>")
    model = aug.load_diffusion(args.diffusion)
    if model.joints != joints or model.frame_length != frames:
        raise CompatibilityError(
            f"diffusion checkpoint is for J={model.joints}, H={model.frame_length}; data has J={joints}, H={frames}"
        )
    return aug.DiffusionAugmenter(model, o)


def _encoder_for(args, joints: int, frames: int) -> enc.EncoderParams:
    params = tr.load_encoder(args.encoder)
    enc.check_compatible(params.config, joints, frames)
    return params


def _write_csv(path, rows, fields):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)


def cmd_synth(args, cfg, out: Path):
    if args.spec:
        spec = json.loads(Path(args.spec).read_text())
    else:
        spec = mo.default_synthetic_spec(
            cfg["synth.categories"], cfg["synth.per_category"], cfg["synth.joints"], cfg["synth.frames"],
            seed=cfg["seed"], noise=cfg["synth.noise"], amplitude_jitter=cfg["synth.amplitude_jitter"],
            phase_jitter=cfg["synth.phase_jitter"], speed_jitter=cfg["synth.speed_jitter"],
            joint_jitter=cfg["synth.joint_jitter"], drift=cfg["synth.drift"],
        )
    corpus = mo.generate_synthetic_corpus(spec, cfg["seed"])
    names = [c["name"] for c in spec["categories"]]
    n_unseen = cfg["synth.unseen"]
    if not 0 <= n_unseen <= len(names) - 2:
        raise ConfigError(f"--unseen {n_unseen} must leave at least 2 training categories")
    unseen = names[len(names) - n_unseen:] if n_unseen else []
    manifest = mo.write_dataset(corpus, out, unseen=unseen, test_fraction=cfg["synth.test_fraction"],
                                seed=cfg["seed"])
    (out / "corpus_spec.json").write_text(json.dumps(spec, indent=1))
    print(f"wrote {len(manifest.samples)} samples, {len(names)} categories "
          f"({len(unseen)} unseen) to {out / 'manifest.json'}")


def cmd_pretrain_diffusion(args, cfg, out: Path):
    manifest = _manifest(args, cfg)
    splits = ("train",) if cfg["diffusion.corpus"] == "train" else None
    motions = [m.motion for m in manifest.load_all(manifest.entries(splits=splits))]
    dcfg = aug.DiffusionConfig(**{k: cfg[f"diffusion.{k}"] for k in
                                  ("steps", "dct_components", "hidden", "blocks", "epochs", "batch_size", "lr",
                                   "prior_components", "prior_rank", "prior_floor")})
    model, history = aug.train_diffusion(motions, dcfg, seed=cfg["seed"])
    aug.save_diffusion(out / "diffusion.ckpt", model,
                       {"seed": cfg["seed"], "corpus": cfg["diffusion.corpus"], "samples": len(motions)})
    rows = [{"epoch": i + 1, "loss": v} for i, v in enumerate(history["loss"])]
    _write_csv(out / "diffusion_loss.csv", rows, ["epoch", "loss"])
    plotting.plot_loss(rows, out / "diffusion_loss.png", "noise-prediction loss")
    print(f"diffusion validation loss {history['val_initial']:.2f} -> {history['val_final']:.2f}; "
          f"saved {out / 'diffusion.ckpt'}")


def cmd_train(args, cfg, out: Path):
    manifest = _manifest(args, cfg)
    ecfg = enc.EncoderConfig(
        joint_count=manifest.joints, dct_components=cfg["encoder.dct_components"],
        hidden_dim=cfg["encoder.hidden_dim"], blocks=cfg["encoder.blocks"],
        activation=cfg["encoder.activation"], frame_length=manifest.frame_length,
    )
    augmenter = _augmenter(args, cfg, manifest.joints, manifest.frame_length)
    tcfg = tr.TrainConfig(
        epochs=cfg["train.epochs"], lr_start=cfg["train.lr_start"], lr_end=cfg["train.lr_end"],
        temperature=cfg["train.temperature"], n_g=cfg["train.n_g"] if augmenter else 0,
        steps_per_epoch=cfg["train.steps_per_epoch"], cache_generations=cfg["train.cache_generations"],
        seed=cfg["seed"],
    )
    meta = {"seed": cfg["seed"], "augment": cfg["augment.kind"], "n_g": tcfg.n_g}
    every = args.checkpoint_every

    def on_epoch(epoch, params, row):
        if every and epoch % every == 0:
            (out / "checkpoints").mkdir(exist_ok=True)
            tr.save_encoder(out / "checkpoints" / f"epoch_{epoch:04d}.ckpt", params, {**meta, "epoch": epoch})

    params, rows = tr.train(manifest, ecfg, augmenter, tcfg, on_epoch)
    tr.save_encoder(out / "encoder.ckpt", params, {**meta, "epoch": tcfg.epochs})
    _write_csv(out / "train_log.csv", rows, ["epoch", "lr", "loss"])
    plotting.plot_loss(rows, out / "train_loss.png", "contrastive loss")
    batch = 2 * len(manifest.train_categories) * (1 + tcfg.n_g)
    print(f"trained {tcfg.epochs} epochs, batch size L={batch}, final loss {rows[-1]['loss']:.4f}; "
          f"saved {out / 'encoder.ckpt'}")


def _eval_config(cfg) -> inf.EvalConfig:
    return inf.EvalConfig(n_s=cfg["eval.n_s"], n_g=cfg["eval.n_g"] if cfg["augment.kind"] != "none" else 0,
                          trials=cfg["eval.trials"], seed=cfg["seed"], metric=cfg["eval.metric"])


def cmd_eval(args, cfg, out: Path):
    manifest = _manifest(args, cfg)
    params = _encoder_for(args, manifest.joints, manifest.frame_length)
    augmenter = _augmenter(args, cfg, manifest.joints, manifest.frame_length)
    report = inf.evaluate(manifest, params, augmenter, _eval_config(cfg))
    inf.write_report(report, out / "eval.csv", out / "eval.json")
    plotting.plot_eval(report, out / "eval.png")
    for r in report.rows():
        print(f"{r['category']:>20s}  {r['mean_auc']:.3f} ± {r['std_auc']:.3f}")
    print(f"{'mean':>20s}  {report.mean_auc:.3f} ± {report.trial_std:.3f}")


def cmd_score(args, cfg, out: Path):
    params = tr.load_encoder(args.encoder)
    ecfg = params.config
    files = sorted(Path(args.support_dir).glob("*.bin"))
    if not files:
        raise FileNotFoundError(f"no .bin support files in {args.support_dir}")

    def load(path):
        raw = mo.read_motion_file(path, ecfg.joint_count)
        return mo.preprocess(raw, ecfg.frame_length, center_root=cfg["data.center_root"])

    support = mo.SupportSet(tuple(load(f) for f in files), category=str(args.support_dir),
                            member_ids=tuple(f.stem for f in files))
    augmenter = _augmenter(args, cfg, ecfg.joint_count, ecfg.frame_length)
    basis = build_dct_basis(ecfg.dct_components, ecfg.frame_length)
    n_g = cfg["eval.n_g"] if augmenter else 0
    s = inf.score(params, basis, support, augmenter, n_g, load(args.input), cfg["seed"],
                  metric=cfg["eval.metric"], sample_id=Path(args.input).stem)
    (out / "score.json").write_text(json.dumps(
        {"input": args.input, "score": s.value, "support": [str(f) for f in files], "n_g": n_g}, indent=2))
    print(f"{s.value:.6f}")


def cmd_sweep(args, cfg, out: Path):
    manifest = _manifest(args, cfg)
    params = _encoder_for(args, manifest.joints, manifest.frame_length)
    augmenter = _augmenter(args, cfg, manifest.joints, manifest.frame_length)
    grid = inf.expand_grid(cfg["sweep.n_s"], cfg["sweep.n_g"] if augmenter else [0],
                           cfg["sweep.observed"], manifest.frame_length)
    results = inf.sweep(manifest, params, augmenter, grid, _eval_config(cfg))
    rows = [r for r, _ in results]
    inf.write_sweep(rows, out / "sweep.csv")
    plotting.plot_sweep(rows, out / "sweep.png")
    for r in rows:
        print(f"n_s={r['n_s']} n_g={r['n_g']} o={r['o']} p={r['p']}  "
              f"auc {r['mean_auc']:.3f}  std {r['mean_std']:.3f}")


def cmd_export_embeddings(args, cfg, out: Path):
    manifest = _manifest(args, cfg)
    params = _encoder_for(args, manifest.joints, manifest.frame_length)
    basis = build_dct_basis(params.config.dct_components, manifest.frame_length)
    samples = manifest.load_all(manifest.entries(splits=tuple(args.splits)))
    inf.export_embeddings(params, basis, samples, out / "embeddings.csv")
    print(f"wrote {len(samples)} embeddings to {out / 'embeddings.csv'}")


COMMANDS = {
    "synth": cmd_synth,
    "pretrain-diffusion": cmd_pretrain_diffusion,
    "train": cmd_train,
    "eval": cmd_eval,
    "score": cmd_score,
    "sweep": cmd_sweep,
    "export-embeddings": cmd_export_embeddings,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        inputs = {k: v for k, v in vars(args).items() if "." not in k and k not in ("command", "config", "verbose", "seed")}
        cfgmod.write_snapshot(cfg, out, args.command, inputs)
        COMMANDS[args.command](args, cfg, out)
    except HaadError as exc:
        kind = type(exc).__name__.replace("Error", "").lower()
        print(f"haad {args.command}: {kind} error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"haad {args.command}: io error: {exc}", file=sys.stderr)
        return IO_EXIT
    return 0


if __name__ == "__main__":
    sys.exit(main())
