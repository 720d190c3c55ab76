"""Command-line entry point: ``urgan simulate | train | infer | evaluate``.

Exit codes: 0 success, 1 configuration or input error, 2 training divergence.
"""

import argparse
import dataclasses
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np
import torch

from . import evaluation
from .config import ConfigError, RunConfig, derive_seed, load_config
from .data_sim import (
    NOISE_LEVELS,
    Volume,
    calibrate_levels,
    corrupt_volume,
    insert_lesion,
    lesion_weights,
    make_mask,
    make_phantom,
    random_lesion,
)
from .inference import predict_volume, write_bundle
from .io import read_volume, write_json, write_raw, write_volume
from .networks import build_discriminator, build_generator, load_checkpoint, save_checkpoint
from .training import TrainingDiverged, train, volumes_to_training_data

log = logging.getLogger("urgan")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2
CONFIG_ECHO = "config.json"


class CommandError(Exception):
    """Input problem reported to the user with exit code 1."""


def _prepare_out(out, force):
    out = Path(out)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise CommandError(f"{out} exists and is not empty (use --force to overwrite)")
        # only wipe directories this tool wrote
        if not (out / CONFIG_ECHO).is_file():
            raise CommandError(f"refusing to clear {out}: it has no {CONFIG_ECHO} from a previous run")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# simulate


def _phantom(cfg: RunConfig, split, i):
    seed = derive_seed(cfg.seed, f"data_sim.phantom.{split}", i)
    return make_phantom(seed, tuple(cfg.data.shape), paired=cfg.task == "MP", smoothing=cfg.data.smoothing)


def _source_target(cfg, vol):
    """(clean source, target) for a simulated subject."""
    return (vol, vol) if cfg.task == "QE" else vol


def cmd_simulate(cfg: RunConfig, out, force=False) -> Path:
    """Write train/val/test splits, calibrated noise levels and (MP) a lesion subset."""
    out = _prepare_out(out, force)
    d = cfg.data
    mask = None
    if cfg.task == "QE":
        mask = make_mask(tuple(d.shape[1:]), d.coverage, seed=derive_seed(cfg.seed, "data_sim.mask"),
                         center_fraction=d.center_fraction, density=d.mask_density)
        write_raw(out / "mask.raw", mask.grid)
        write_json(out / "mask.json", {"shape": list(mask.shape), "dtype": "<f4", "file": "mask.raw",
                                       "coverage_fraction": mask.coverage_fraction, "layout": "centred"})

    subjects = {split: [_source_target(cfg, _phantom(cfg, split, i)) for i in range(n)]
                for split, n in d.splits.items()}
    if not subjects.get("test"):
        raise CommandError("the test split must contain at least one volume")

    specs = cfg.noise_specs()
    if specs is None:
        clean = [src for src, _ in subjects["test"]]
        specs = calibrate_levels(clean, d.targets(cfg.task), cfg.domain, mask,
                                 seed=derive_seed(cfg.seed, "data_sim.calibration"))
    write_json(out / "noise_levels.json", [dataclasses.asdict(s) for s in specs])
    train_sigma = specs[0].sigma if d.train_sigma is None else float(d.train_sigma)

    def corrupt(src, sigma, stream, i):
        return corrupt_volume(src, cfg.domain, sigma, derive_seed(cfg.seed, stream, i), mask)

    for split in ("train", "val"):
        for i, (src, tgt) in enumerate(subjects.get(split, [])):
            vid = f"vol_{i:03d}"
            write_volume(out / split / "input" / vid, corrupt(src, train_sigma, f"data_sim.noise.{split}", i),
                         volume_id=vid, sigma=train_sigma)
            write_volume(out / split / "target" / vid, tgt, volume_id=vid)
    for i, (src, tgt) in enumerate(subjects["test"]):
        vid = f"vol_{i:03d}"
        write_volume(out / "test" / "reference" / vid, tgt, volume_id=vid)
        for spec in specs:
            write_volume(out / "test" / spec.level_id / vid, corrupt(src, spec.sigma, f"data_sim.noise.{spec.level_id}", i),
                         volume_id=vid, nl=spec.level_id, sigma=spec.sigma)

    if cfg.task == "MP" and d.lesion.count > 0:
        lc = d.lesion
        for i in range(lc.count):
            vid = f"vol_{i:03d}"
            t1, t2 = _phantom(cfg, "lesion", i)
            spec = random_lesion(t1, derive_seed(cfg.seed, "data_sim.lesion", i), tuple(lc.radius),
                                 lc.t1_delta, lc.t2_delta)
            t1, t2 = insert_lesion((t1, t2), spec)
            info = {"center": list(spec.center), "radius": spec.radius, "taper": spec.taper}
            write_volume(out / "lesion" / "input" / vid, corrupt(t1, specs[0].sigma, "data_sim.noise.lesion", i),
                         volume_id=vid, lesion=info)
            write_volume(out / "lesion" / "reference" / vid, t2, volume_id=vid, lesion=info)
            support = (lesion_weights(t1.shape, spec) > 0).astype(np.float64)
            write_volume(out / "lesion" / "support" / vid, Volume(support, t1.spacing), volume_id=vid, lesion=info)

    cfg.save(out / CONFIG_ECHO)
    return out


# --------------------------------------------------------------------------
# train


def _read_split(root, split):
    ids = evaluation.volume_ids(root / split / "input", "")
    if not ids:
        raise CommandError(f"no volumes in {root / split / 'input'}")
    return [(read_volume(root / split / "input" / v)[0], read_volume(root / split / "target" / v)[0]) for v in ids]


def _dataset_dir(cfg, dataset):
    root = Path(dataset or cfg.paths.dataset)
    if not (root / CONFIG_ECHO).is_file():
        raise CommandError(f"no simulated dataset at {root}")
    return root


def cmd_train(cfg: RunConfig, out, dataset=None, force=False):
    """Train on ``<dataset>/train``, validate on ``val``; writes checkpoint, log and config echo."""
    root = _dataset_dir(cfg, dataset)
    data = volumes_to_training_data(_read_split(root, "train"),
                                    _read_split(root, "val") if (root / "val" / "input").is_dir() else None,
                                    cfg.data.slab_depth)
    out = _prepare_out(out, force)
    cfg.save(out / CONFIG_ECHO)
    torch.manual_seed(derive_seed(cfg.seed, "networks"))
    gen, disc = build_generator(cfg.generator), build_discriminator(cfg.discriminator)
    ckpt, history = train(cfg.train, data, gen, disc, log_path=out / "train_log.jsonl",
                          dump_path=out / "divergence_dump.json")
    ckpt.manifest["initial_step_loss_u"] = history.step_loss_u[0]
    save_checkpoint(ckpt, out / "checkpoint.pt")
    return ckpt, history


# --------------------------------------------------------------------------
# infer


def _load_generator(path):
    path = Path(path)
    if path.is_dir():
        path = path / "checkpoint.pt"
    if not path.is_file():
        raise CommandError(f"checkpoint not found: {path}")
    gen, _ = load_checkpoint(path).build_models()
    return gen


def _check_shape(gen, vol, where):
    step = 2**gen.cfg.depth
    d, h, w = vol.shape
    if d < gen.cfg.in_channels or h % step or w % step:
        raise CommandError(f"{where}: volume shape {vol.shape} does not fit the checkpoint "
                           f"(slab depth {gen.cfg.in_channels}, H and W divisible by {step})")


def cmd_infer(cfg: RunConfig, out, checkpoint=None, dataset=None, nl="all", split="all", force=False):
    """MC-dropout prediction bundles for test noise levels and the lesion subset."""
    root = _dataset_dir(cfg, dataset)
    gen = _load_generator(checkpoint or cfg.paths.checkpoints)
    levels = list(NOISE_LEVELS) if nl == "all" else [nl]
    jobs = []
    if split in ("all", "test"):
        jobs += [(root / "test" / lvl, lvl) for lvl in levels]
    if split in ("all", "lesion") and (root / "lesion" / "input").is_dir():
        jobs.append((root / "lesion" / "input", "lesion"))
    for src, _ in jobs:
        if not src.is_dir():
            raise CommandError(f"missing input folder {src}")
    out = _prepare_out(out, force)
    cfg.save(out / CONFIG_ECHO)
    for src, name in jobs:
        for vid in evaluation.volume_ids(src, ""):
            vol, manifest = read_volume(src / vid)
            _check_shape(gen, vol, src / vid)
            bundle = predict_volume(gen, vol, cfg.inference)
            write_bundle(out / name, vid, bundle, vol.spacing, nl=name, mc_passes=cfg.inference.mc_passes)
    return out


# --------------------------------------------------------------------------
# evaluate


def cmd_evaluate(cfg: RunConfig, out, predictions=None, dataset=None, force=False):
    root = _dataset_dir(cfg, dataset)
    pred = Path(predictions or cfg.paths.predictions)
    if not pred.is_dir():
        raise CommandError(f"no predictions at {pred}")
    out = _prepare_out(out, force)
    cfg.save(out / CONFIG_ECHO)
    return evaluation.evaluate(pred, root, out, cfg.analysis)


# --------------------------------------------------------------------------
# argument handling

FLAG_KEYS = {
    "task": "task", "seed": "seed", "coverage": "data.coverage", "sigma": "data.train_sigma",
    "epochs": "train.epochs", "max_steps": "train.max_steps", "mc_passes": "inference.mc_passes",
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--force", action="store_true", help="overwrite a previous output directory")
    common.add_argument("--task", choices=("QE", "MP"))
    common.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                        help="override any config value, e.g. --set train.batch_size=4")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="urgan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="simulate a paired phantom dataset")
    s.add_argument("--coverage", type=float, help="k-space row coverage (QE)")
    s.add_argument("--sigma", type=float, help="noise on training inputs (default: calibrated NL0)")
    t = sub.add_parser("train", parents=[common], help="train generator and discriminator")
    t.add_argument("--dataset")
    t.add_argument("--epochs", type=int)
    t.add_argument("--max-steps", type=int)
    i = sub.add_parser("infer", parents=[common], help="MC-dropout inference on the test splits")
    i.add_argument("--dataset")
    i.add_argument("--checkpoint", help="checkpoint file or training output directory")
    i.add_argument("--nl", default="all", choices=("all",) + NOISE_LEVELS)
    i.add_argument("--split", default="all", choices=("all", "test", "lesion"))
    i.add_argument("--mc-passes", type=int)
    e = sub.add_parser("evaluate", parents=[common], help="metrics, correlations and lesion analysis")
    e.add_argument("--dataset")
    e.add_argument("--predictions")
    return p


def resolve_config(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            overrides[key] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key] = raw
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "simulate":
            out = cmd_simulate(cfg, args.out or cfg.paths.dataset, args.force)
            print(f"dataset written to {out}")
        elif args.command == "train":
            _, history = cmd_train(cfg, args.out or cfg.paths.checkpoints, args.dataset, args.force)
            last = history.records[-1] if history.records else {}
            print(f"trained {len(history.step_loss_u)} steps; final loss_u {last.get('loss_u')}")
        elif args.command == "infer":
            out = cmd_infer(cfg, args.out or cfg.paths.predictions, args.checkpoint, args.dataset,
                            args.nl, args.split, args.force)
            print(f"predictions written to {out}")
        else:
            summary = cmd_evaluate(cfg, args.out or cfg.paths.reports, args.predictions, args.dataset, args.force)
            print(json.dumps(summary["correlation"] | {"beta_decreasing": summary["beta_trend"]["decreasing"]}))
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, CommandError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
