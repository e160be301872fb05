"""Command line entry point: prepare, train, outpaint, evaluate."""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import plotting
from .config import load_config
from .data import apply_mask, load_image, load_split, make_right_mask, prepare_corpus
from .errors import ConfigError, IngestError, OutpaintError, ProvenanceError
from .evaluation import ablation_table, evaluate_dataset, write_ablation
from .networks import STAGES, ModelBundle
from .synthetic import write_corpus
from .training import load_checkpoint, outpaint, seed_everything, train_stage

log = logging.getLogger("edgeoutpaint")


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "device", None):
        cfg.device = args.device
    if getattr(args, "mask_ratio", None) is not None:
        if not 0 < args.mask_ratio < 1:
            raise ConfigError(f"--mask-ratio must lie in (0, 1), got {args.mask_ratio}")
        cfg.mask_ratio = args.mask_ratio
    return cfg


def cmd_prepare(cfg):
    split = prepare_corpus(cfg.data_root, cfg.data_dir, cfg.side, cfg.mask_ratio,
                           cfg.fractions, cfg.seed, cfg.canny)
    summary = {**split.as_dict(), "seed": split.seed}
    (cfg.data_dir / "split.json").write_text(json.dumps(summary, indent=1) + "\n")
    log.info("prepared %d/%d/%d train/val/test samples under %s",
             len(split.train), len(split.val), len(split.test), cfg.data_dir)
    return split


def _starting_bundle(cfg, stage):
    """Pick the checkpoint a stage builds on, failing before any compute."""
    ckpt = cfg.checkpoint_dir
    if stage == "edge":
        return ModelBundle.create(cfg.networks, cfg.seed)
    if stage == "inpaint":
        if (ckpt / "edge.pt").exists():
            return load_checkpoint(ckpt / "edge.pt")
        return ModelBundle.create(cfg.networks, cfg.seed)
    for name in ("inpaint.pt", "edge.pt"):
        if (ckpt / name).exists():
            bundle = load_checkpoint(ckpt / name)
            if "edge" in bundle.history:
                return bundle
    raise ProvenanceError(f"joint stage needs an edge-stage checkpoint in {ckpt}")


def cmd_train(cfg, stage="all", restart=False):
    stages = list(STAGES) if stage == "all" else [stage]
    if stage == "joint":
        _starting_bundle(cfg, "joint")
    if restart:
        for s in stages:
            for p in (cfg.checkpoint_dir / f"{s}.pt", cfg.checkpoint_dir / f"{s}_partial.pt"):
                p.unlink(missing_ok=True)
    train = load_split(cfg.data_dir / "train")
    if not train:
        raise IngestError("training split is empty")
    meta = {"config_hash": cfg.fingerprint()}
    reports = {}
    bundle = None
    for s in stages:
        final = cfg.checkpoint_dir / f"{s}.pt"
        if stage == "all" and final.exists():
            bundle = load_checkpoint(final)
            log.info("%s stage already complete (%s); skipping", s, final)
            continue
        if bundle is None:
            bundle = _starting_bundle(cfg, s)
        seed_everything(cfg.seed, cfg.deterministic)
        log.info("training %s stage for %d iterations", s, cfg.stages[s]["iterations"])
        bundle, report = train_stage(cfg.stage_config(s), train, bundle, out_dir=cfg.output_root,
                                     canny_params=cfg.canny, device=cfg.device,
                                     deterministic=cfg.deterministic, run_meta=meta)
        reports[s] = report
        log.info("%s stage done in %.1fs -> %s", s, report.wall_time, report.checkpoint)
    return reports


def cmd_outpaint(cfg, image_path, checkpoint, output=None):
    bundle = load_checkpoint(checkpoint)
    img = load_image(image_path, cfg.side)
    mask = make_right_mask(cfg.side, cfg.side, cfg.mask_ratio)
    out = outpaint(img, mask, bundle, cfg.canny)
    out_dir = Path(output) if output else Path(cfg.output_root) / "outpaint"
    stem = Path(image_path).stem
    result = plotting.save_png(out, out_dir / f"{stem}_outpainted.png")
    strip = plotting.save_strip(apply_mask(img, mask), out, img, out_dir / f"{stem}_strip.png")
    return result, strip


def _tag(bundle, fallback):
    lam = bundle.meta.get("lambda_sem")
    if lam is None:
        return fallback
    return "Model without L_sEM" if float(lam) == 0 else "Model with L_sEM"


def cmd_evaluate(cfg, checkpoints, tags=None):
    if not 1 <= len(checkpoints) <= 2:
        raise ConfigError("evaluate takes one or two --checkpoint values")
    bundles = [load_checkpoint(c) for c in checkpoints]
    hashes = {b.meta.get("config_hash") for b in bundles}
    if len(hashes) > 1:
        raise ConfigError("checkpoints come from runs with different data/network configs")
    test = load_split(cfg.data_dir / cfg.metrics.get("split", "test"))
    if not test:
        raise IngestError("test split is empty")
    if tags is None:
        tags = [_tag(b, Path(c).stem) for b, c in zip(bundles, checkpoints)]
        if len(set(tags)) < len(tags):
            tags = [f"{t} ({Path(c).parent.parent.name}/{Path(c).stem})" for t, c in zip(tags, checkpoints)]
        elif tags == ["Model with L_sEM", "Model without L_sEM"]:
            # ablation baseline goes on the first row
            bundles, tags = bundles[::-1], tags[::-1]
    out_dir = Path(cfg.output_root) / "eval"
    reports = []
    for bundle, tag in zip(bundles, tags):
        rep = evaluate_dataset(bundle, test, cfg.mask_ratio, tag, cfg.canny)
        slug = "".join(c if c.isalnum() else "_" for c in tag).strip("_").lower()
        rep.save(out_dir / f"metrics_{slug}.json")
        reports.append(rep)
        log.info("%s: PSNR %.3f  SSIM %.3f  MAE %.3f", tag, rep.aggregate["psnr"],
                 rep.aggregate["ssim"], rep.aggregate["mae"])
    table = None
    if len(reports) == 2:
        table = ablation_table(*reports)
        write_ablation(table, out_dir)
        print(table["text"], end="")
    return reports, table


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML run configuration")
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--device", default=None, help="torch device, e.g. cpu or cuda")
    common.add_argument("--mask-ratio", type=float, default=None, help="fraction of columns to outpaint")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="edgeoutpaint", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="ingest, mask and split the corpus")
    t = sub.add_parser("train", parents=[common], help="run one training stage or all of them")
    t.add_argument("--stage", choices=list(STAGES) + ["all"], default="all")
    t.add_argument("--restart", action="store_true", help="discard existing checkpoints for the stage(s)")
    o = sub.add_parser("outpaint", parents=[common], help="outpaint one image")
    o.add_argument("--checkpoint", required=True)
    o.add_argument("--input", required=True)
    o.add_argument("--output", default=None, help="output directory")
    e = sub.add_parser("evaluate", parents=[common], help="score checkpoints on the test split")
    e.add_argument("--checkpoint", action="append", required=True)
    e.add_argument("--tag", action="append", default=None)

    s = sub.add_parser("synth-corpus", help="write the procedural smoke corpus")
    s.add_argument("out_dir")
    s.add_argument("--count", type=int, default=40)
    s.add_argument("--side", type=int, default=128)
    s.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth-corpus":
            write_corpus(args.out_dir, args.count, args.side, args.seed)
            return 0
        cfg = _load(args)
        if args.command == "prepare":
            cmd_prepare(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.stage, args.restart)
        elif args.command == "outpaint":
            for path in cmd_outpaint(cfg, args.input, args.checkpoint, args.output):
                print(path)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.checkpoint, args.tag)
    except OutpaintError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
