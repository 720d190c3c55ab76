"""Alternating GAN optimisation with cosine-annealed Adam."""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data_sim import Volume, extract_slabs
from .losses import LAMBDA_PRESETS, LossWeights, bce, discriminator_loss, generator_loss, l1_loss, loss_u
from .metrics import psnr, ssim
from .networks import Checkpoint, Discriminator, Generator

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when the fidelity loss becomes non-finite; carries a state dump."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


@dataclass
class TrainConfig:
    batch_size: int = 8
    lr_init: float = 2e-4
    schedule: str = "cosine"
    epochs: int = 30
    lambda_adv: float | None = None  # None -> task preset
    seed: int = 0
    task: str = "QE"
    # "ggd" trains the uncertainty-aware generator, "l1" a plain baseline
    fidelity: str = "ggd"
    max_steps: int | None = None
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr_init > 0:
            raise ValueError("lr_init must be > 0")
        if self.schedule != "cosine":
            raise ValueError(f"unsupported schedule {self.schedule!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.task not in LAMBDA_PRESETS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.fidelity not in ("ggd", "l1"):
            raise ValueError(f"unknown fidelity {self.fidelity!r}")
        if self.lambda_adv is not None and not self.lambda_adv > 0:
            raise ValueError("lambda_adv must be > 0")

    @property
    def weights(self) -> LossWeights:
        lam = self.lambda_adv if self.lambda_adv is not None else LAMBDA_PRESETS[self.task]
        return LossWeights(lam)


FULL_SCALE = dict(batch_size=16)


@dataclass
class PairedSlabs:
    """Input/target slab stacks, both ``N x C x H x W``."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float32)
        self.targets = np.asarray(self.targets, dtype=np.float32)
        if self.inputs.shape != self.targets.shape:
            raise ValueError("input and target slabs differ in shape")

    def __len__(self):
        return len(self.inputs)

    @classmethod
    def from_volumes(cls, inputs, targets, slab_depth=3, stride=1):
        xs, ys = [], []
        for vi, vt in zip(inputs, targets):
            if vi.shape != vt.shape:
                raise ValueError("paired volumes differ in shape")
            xs.append(extract_slabs(vi, slab_depth, stride).data)
            ys.append(extract_slabs(vt, slab_depth, stride).data)
        if not xs:
            raise ValueError("no volumes given")
        return cls(np.concatenate(xs), np.concatenate(ys))


@dataclass
class TrainingData:
    train: PairedSlabs
    val: PairedSlabs | None = None


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)
    step_loss_u: list = field(default_factory=list)

    def append(self, record, path=None):
        self.records.append(record)
        if path is not None:
            with open(path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def discriminator_step(gen: Generator, disc: Discriminator, opt_d, x, y, rng=None) -> float:
    """One discriminator update on real targets and detached generator output."""
    with torch.no_grad():
        fake = gen(x, dropout_active=True, generator=rng).x_hat
    opt_d.zero_grad(set_to_none=True)
    loss = discriminator_loss(disc(y), disc(fake))
    loss.backward()
    opt_d.step()
    return loss.item()


def generator_step(gen: Generator, disc: Discriminator, opt_g, x, y, weights: LossWeights,
                   fidelity="ggd", rng=None) -> tuple[float, float]:
    """One generator update; returns (fidelity loss, unweighted adversarial BCE)."""
    opt_g.zero_grad(set_to_none=True)
    pred = gen(x, dropout_active=True, generator=rng)
    if not all(bool(torch.isfinite(t.detach()).all()) for t in (pred.x_hat, pred.alpha_hat, pred.beta_hat)):
        return float("nan"), float("nan")
    for p in disc.parameters():
        p.requires_grad_(False)
    try:
        scores = disc(pred.x_hat)
        if fidelity == "ggd":
            fid = loss_u(pred, y)
            if not math.isfinite(fid.item()):
                return float(fid), float("nan")
            total = generator_loss(pred, y, scores, weights)
        else:
            fid = l1_loss(pred.x_hat, y)
            total = fid + weights.lambda_adv * bce(scores, torch.ones_like(scores))
        adv = float(bce(scores.detach(), torch.ones_like(scores)))
        total.backward()
    finally:
        for p in disc.parameters():
            p.requires_grad_(True)
    opt_g.step()
    return fid.item(), adv


def validate(gen: Generator, val: PairedSlabs, batch_size=32) -> tuple[float, float]:
    """Single deterministic pass (dropout off); mean SSIM/PSNR over centre slices."""
    was_training = gen.training
    gen.eval()
    centre = val.inputs.shape[1] // 2
    ssims, psnrs = [], []
    try:
        with torch.no_grad():
            for i in range(0, len(val), batch_size):
                x = torch.from_numpy(val.inputs[i:i + batch_size])
                pred = gen(x, dropout_active=False).x_hat.numpy()
                for p, t in zip(pred[:, centre], val.targets[i:i + batch_size, centre]):
                    ssims.append(ssim(t, p))
                    psnrs.append(psnr(t, p))
    finally:
        gen.train(was_training)
    return float(np.mean(ssims)), float(np.mean(psnrs))


def train(cfg: TrainConfig, dataset: TrainingData, gen: Generator, disc: Discriminator,
          log_path=None, dump_path=None):
    """Alternate one discriminator and one generator update per mini-batch.

    The learning rate of both Adam optimisers follows a single cosine cycle
    from ``cfg.lr_init`` to 0 over ``cfg.epochs``. Batch order and dropout masks
    come from generators seeded by ``cfg.seed``.

    Returns
    -------
    (Checkpoint, TrainingLog)

    Raises
    ------
    TrainingDiverged
        If the fidelity loss becomes non-finite. The state dump is also written
        to ``dump_path`` when given.
    """
    train_set = dataset.train
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if train_set.inputs.shape[1] != gen.cfg.in_channels:
        raise ValueError("slab depth does not match the generator's input channels")

    weights = cfg.weights
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.lr_init, betas=cfg.adam_betas, eps=cfg.adam_eps)
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.lr_init, betas=cfg.adam_betas, eps=cfg.adam_eps)
    sched_g = torch.optim.lr_scheduler.CosineAnnealingLR(opt_g, T_max=cfg.epochs, eta_min=0.0)
    sched_d = torch.optim.lr_scheduler.CosineAnnealingLR(opt_d, T_max=cfg.epochs, eta_min=0.0)
    order_rng = np.random.default_rng(cfg.seed)
    drop_rng = torch.Generator().manual_seed(cfg.seed)
    history = TrainingLog()
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        Path(log_path).write_text("")

    gen.train()
    disc.train()
    step = 0
    for epoch in range(cfg.epochs):
        lr = opt_g.param_groups[0]["lr"]
        perm = order_rng.permutation(len(train_set))
        fids, advs, dls = [], [], []
        for i in range(0, len(perm), cfg.batch_size):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            idx = np.sort(perm[i:i + cfg.batch_size])
            x = torch.from_numpy(train_set.inputs[idx])
            y = torch.from_numpy(train_set.targets[idx])
            d_loss = discriminator_step(gen, disc, opt_d, x, y, drop_rng)
            fid, adv = generator_step(gen, disc, opt_g, x, y, weights, cfg.fidelity, drop_rng)
            if not math.isfinite(fid):
                state = {"epoch": epoch, "step": step, "lr": lr, "loss_u": fid,
                         "last_records": history.records[-3:], "config": _config_echo(cfg)}
                if dump_path is not None:
                    Path(dump_path).write_text(json.dumps(state, indent=2, default=str))
                raise TrainingDiverged(f"fidelity loss became non-finite at step {step}", state)
            history.step_loss_u.append(fid)
            fids.append(fid)
            advs.append(adv)
            dls.append(d_loss)
            step += 1
        if not fids:
            break
        record = {"epoch": epoch, "lr": lr, "loss_u": float(np.mean(fids)),
                  "loss_adv_g": float(np.mean(advs)), "loss_d": float(np.mean(dls)), "steps": step}
        if dataset.val is not None and len(dataset.val):
            record["val_ssim"], record["val_psnr"] = validate(gen, dataset.val)
        history.append(record, log_path)
        log.info("epoch %d: %s", epoch, record)
        sched_g.step()
        sched_d.step()

    ckpt = Checkpoint.from_models(gen, disc, opt_g, opt_d, step=step, seed=cfg.seed,
                                  train_config=_config_echo(cfg))
    return ckpt, history


def _config_echo(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["adam_betas"] = list(d["adam_betas"])
    return d


def volumes_to_training_data(train_pairs, val_pairs=None, slab_depth=3) -> TrainingData:
    """Build slab stacks from lists of ``(input Volume, target Volume)`` pairs."""
    def stack(pairs):
        pairs = list(pairs)
        return PairedSlabs.from_volumes([p[0] for p in pairs], [p[1] for p in pairs], slab_depth)

    return TrainingData(stack(train_pairs), stack(val_pairs) if val_pairs else None)


__all__ = [
    "TrainConfig", "TrainingData", "TrainingLog", "PairedSlabs", "TrainingDiverged", "Volume",
    "train", "discriminator_step", "generator_step", "validate", "volumes_to_training_data",
]
