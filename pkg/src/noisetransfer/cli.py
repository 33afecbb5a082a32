"""Command-line entry point.

Subcommands: train, generate, evaluate, sample-noise, denoise-train,
denoise-eval, validate-config, describe. Every subcommand taking a seed is
bit-for-bit reproducible given identical inputs and config.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .config import RunConfig, dry_run_shapes, dump_config, load_config
from .data import IMAGE_EXTS, CleanPool, PairedDataset, load_image
from .denoise import (
    GENERATED,
    DenoisePair,
    eval_denoiser,
    load_denoiser,
    make_denoise_pairs,
    save_denoiser,
    train_denoiser,
)
from .errors import ConfigError, DataError, NoiseTransferError
from .evaluation import (
    center_crop_to_multiple,
    evaluate_generation,
    generate_noisy,
    inference_mode,
    load_eval_records,
    write_report,
)
from .noise import KINDS, NoiseSpec, clip01, sample_noisy
from .trainer import TrainData, init_state, load_state, run_training


def _write_png(arr: np.ndarray, path: str) -> None:
    from PIL import Image

    img = (clip01(arr) * 255.0).round().astype(np.uint8)
    Image.fromarray(img).save(path)


def _load_train_ckpt(path: str):
    state = load_state(path)
    return state.generator, state.key_disc


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.yaml"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
    if args.resume:
        state = load_state(args.resume)
    else:
        state = init_state(cfg.trainer, cfg.generator, cfg.discriminator)
    real_ds = (
        PairedDataset.from_manifest(cfg.data.manifest, cfg.trainer.patch)
        if cfg.data.manifest
        else None
    )
    clean_pool = CleanPool.from_dir(cfg.data.clean_dir) if cfg.data.clean_dir else None
    eval_pairs = (
        load_eval_records(
            cfg.data.eval_manifest,
            multiple=2**cfg.generator.depth,
            limit=cfg.data.eval_limit,
        )
        if cfg.data.eval_manifest
        else None
    )
    data = TrainData(
        real_ds=real_ds,
        clean_pool=clean_pool,
        spec_sampler=cfg.spec_sampler(),
        eval_pairs=eval_pairs,
    )
    final = run_training(state, data, args.out, max_steps=args.max_steps,
                         progress=args.progress)
    print(f"final checkpoint: {final}")
    return 0


def cmd_generate(args) -> int:
    generator, key_disc = _load_train_ckpt(args.ckpt)
    multiple = 2**generator.cfg.depth
    clean = center_crop_to_multiple(load_image(args.clean), multiple)
    reference = load_image(args.reference)
    os.makedirs(args.out, exist_ok=True)
    fakes = generate_noisy(generator, key_disc, clean, reference,
                           draws=args.n, seed=args.seed)
    sidecar = []
    import torch

    from .contrastive import cosine_sim

    with inference_mode(key_disc):
        def embed(img: np.ndarray) -> torch.Tensor:
            t = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))).float()
            return key_disc.embed_noise(t[None])[0][0]

        e_ref = embed(reference)
        for i, fake in enumerate(fakes):
            path = os.path.join(args.out, f"sample_{i:03d}.png")
            written = clip01(fake)
            _write_png(written, path)
            cos = float(cosine_sim(e_ref, embed(written.astype(np.float32))))
            sidecar.append({"image": os.path.basename(path), "cosine_to_reference": cos})
    with open(os.path.join(args.out, "samples.json"), "w", encoding="utf-8") as fh:
        json.dump({"seed": args.seed, "samples": sidecar}, fh, indent=2)
    print(f"wrote {len(fakes)} samples to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    generator, key_disc = _load_train_ckpt(args.ckpt)
    pairs = load_eval_records(args.data, multiple=2**generator.cfg.depth,
                              limit=args.limit)
    results = evaluate_generation(generator, key_disc, pairs,
                                  draws=args.draws, seed=args.seed)
    paths = write_report(args.report, results, pairs)
    print(f"akld {results['akld']:.6f}  ks {results['ks']:.6f}")
    print(f"report: {paths['tsv']}  plot: {paths['plot']}")
    return 0


def cmd_sample_noise(args) -> int:
    spec = NoiseSpec(kind=args.kind, sigma=args.sigma, lam=args.lam)
    spec.validate()
    if args.clean:
        clean = load_image(args.clean)
    else:
        clean = np.full((args.size, args.size, 3), args.gray, dtype=np.float32)
    rng = np.random.default_rng(args.seed)
    noisy = sample_noisy(clean, spec, rng)
    _write_png(noisy, args.out)
    print(f"wrote {args.out} ({spec.kind}, sigma={spec.sigma}, lam={spec.lam})")
    return 0


def _reference_pool(path: str) -> list[np.ndarray]:
    if os.path.isdir(path):
        pool = CleanPool.from_dir(path)
        return pool.images
    if path.lower().endswith(IMAGE_EXTS):
        return [load_image(path)]
    ds = PairedDataset.from_manifest(path)
    return [ds.load_pair(i)[1] for i in range(len(ds))]


def cmd_denoise_train(args) -> int:
    cfg = load_config(args.config) if args.config else load_config(None)
    generator, key_disc = _load_train_ckpt(args.ckpt)
    clean_pool = CleanPool.from_dir(args.clean_dir)
    references = _reference_pool(args.references)
    multiple = 2**generator.cfg.depth
    dcfg = cfg.denoiser
    if dcfg.patch % multiple != 0:
        raise ConfigError(
            f"denoiser.patch must be divisible by 2**generator.depth ({multiple})"
        )

    def synthesize(clean, reference, seed):
        return generate_noisy(generator, key_disc, clean, reference, 1, seed=seed)[0]

    pairs = make_denoise_pairs(synthesize, clean_pool, references, args.n,
                               seed=dcfg.seed, patch=dcfg.patch, source=GENERATED)
    n_val = max(1, len(pairs) // 5)
    train_pairs, val_pairs = pairs[:-n_val], pairs[-n_val:]
    net, history = train_denoiser(train_pairs, dcfg, val_pairs=val_pairs,
                                  generative_only=args.generative_only)
    os.makedirs(os.path.join(args.out, "checkpoints"), exist_ok=True)
    os.makedirs(os.path.join(args.out, "logs"), exist_ok=True)
    ckpt_path = os.path.join(args.out, "checkpoints", "denoiser.npz")
    save_denoiser(net, dcfg, ckpt_path)
    with open(os.path.join(args.out, "logs", "denoise_train.tsv"), "w",
              encoding="utf-8") as fh:
        fh.write("epoch\tkey\tvalue\n")
        for ep, loss in enumerate(history["train_loss"], 1):
            fh.write(f"{ep}\ttrain_loss\t{loss:.10g}\n")
        for ep, val in enumerate(history["val_psnr"], 1):
            fh.write(f"{ep}\tval_psnr\t{val:.10g}\n")
    print(f"denoiser checkpoint: {ckpt_path}")
    if history["val_psnr"]:
        print(f"final val psnr: {history['val_psnr'][-1]:.3f} dB")
    return 0


def cmd_denoise_eval(args) -> int:
    net, _ = load_denoiser(args.denoiser)
    ds = PairedDataset.from_manifest(args.data)
    pairs = []
    for i in range(len(ds)):
        clean, noisy = ds.load_pair(i)
        pairs.append(DenoisePair(clean=clean, noisy=noisy,
                                 provenance={"source": "ground_truth"}))
    res = eval_denoiser(net, pairs)
    os.makedirs(args.report, exist_ok=True)
    out = os.path.join(args.report, "denoise_eval.tsv")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("metric\tvalue\n")
        fh.write(f"psnr\t{res['psnr']:.10g}\n")
        fh.write(f"ssim\t{res['ssim']:.10g}\n")
    print(f"psnr {res['psnr']:.3f} dB  ssim {res['ssim']:.4f}")
    return 0


def cmd_validate_config(args) -> int:
    cfg = load_config(args.config)
    sys.stdout.write(dump_config(cfg))
    if args.dry_run:
        shapes = dry_run_shapes(cfg)
        print(f"dry-run shapes: {shapes}")
    return 0


def cmd_describe(args) -> int:
    cfg = load_config(args.config) if args.config else load_config(None)
    from .models import NoiseDiscriminator, NoiseGenerator

    print(NoiseGenerator(cfg.generator).describe())
    print()
    print(NoiseDiscriminator(cfg.discriminator).describe())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="noisetransfer",
        description="Reference-conditioned image noise generation and evaluation.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train the noise generator")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.add_argument("--max-steps", type=int, default=None)
    t.add_argument("--progress", action="store_true")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="synthesize noisy variants of a clean image")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--clean", required=True)
    g.add_argument("--reference", required=True)
    g.add_argument("--n", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("evaluate", help="AKLD/KS report on a held-out manifest")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True, help="evaluation manifest")
    e.add_argument("--report", required=True)
    e.add_argument("--draws", type=int, default=50)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--limit", type=int, default=None)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sample-noise", help="corrupt an image with a synthetic law")
    s.add_argument("--kind", choices=KINDS, required=True)
    s.add_argument("--sigma", type=float, default=None)
    s.add_argument("--lam", type=float, default=None)
    s.add_argument("--clean", default=None)
    s.add_argument("--gray", type=float, default=0.5)
    s.add_argument("--size", type=int, default=128)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample_noise)

    dt = sub.add_parser("denoise-train", help="train the downstream denoiser on generated pairs")
    dt.add_argument("--ckpt", required=True, help="trained generator checkpoint")
    dt.add_argument("--clean-dir", required=True)
    dt.add_argument("--references", required=True,
                    help="manifest, folder or single reference noisy image")
    dt.add_argument("--n", type=int, default=200)
    dt.add_argument("--config", default=None)
    dt.add_argument("--out", required=True)
    dt.add_argument("--generative-only", action="store_true")
    dt.set_defaults(func=cmd_denoise_train)

    de = sub.add_parser("denoise-eval", help="evaluate a trained denoiser")
    de.add_argument("--denoiser", required=True)
    de.add_argument("--data", required=True, help="manifest of clean/noisy pairs")
    de.add_argument("--report", required=True)
    de.set_defaults(func=cmd_denoise_eval)

    v = sub.add_parser("validate-config", help="parse, check and echo a config")
    v.add_argument("--config", required=True)
    v.add_argument("--dry-run", action="store_true",
                   help="also push a zero batch through the networks")
    v.set_defaults(func=cmd_validate_config)

    d = sub.add_parser("describe", help="print network architecture tables")
    d.add_argument("--config", default=None)
    d.set_defaults(func=cmd_describe)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NoiseTransferError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
