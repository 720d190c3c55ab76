"""MC-dropout prediction, uncertainty maps and 2.5D -> 3D merging."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data_sim import SlabBatch, Volume, extract_slabs
from .ggd import ggd_variance
from .io import write_volume
from .losses import GGDParamMaps

BUNDLE_KEYS = ("prediction", "alpha", "beta", "sigma_aleatoric", "sigma_epistemic", "sigma")


@dataclass(frozen=True)
class InferenceConfig:
    mc_passes: int = 50
    dropout_active: bool = True
    seed: int = 0
    # "mean_params": variance of the averaged (alpha, beta);
    # "mean_variance": average of per-pass variances (diagnostic)
    aleatoric: str = "mean_params"
    batch_size: int = 32

    def __post_init__(self):
        if self.mc_passes < 1:
            raise ValueError("mc_passes must be >= 1")
        if self.aleatoric not in ("mean_params", "mean_variance"):
            raise ValueError(f"unknown aleatoric mode {self.aleatoric!r}")


@dataclass
class UncertaintyMaps:
    sigma_aleatoric: np.ndarray
    sigma_epistemic: np.ndarray
    sigma: np.ndarray

    @classmethod
    def from_variances(cls, var_aleatoric, var_epistemic):
        var_aleatoric = np.asarray(var_aleatoric, dtype=np.float64)
        var_epistemic = np.asarray(var_epistemic, dtype=np.float64)
        return cls(np.sqrt(var_aleatoric), np.sqrt(var_epistemic), np.sqrt(var_aleatoric + var_epistemic))


def _passes(gen, x, cfg: InferenceConfig):
    """Run the MC forward passes; returns three ``(R, N, C, H, W)`` float64 arrays."""
    stochastic = cfg.dropout_active and gen.cfg.dropout_rate > 0
    n_passes = cfg.mc_passes if stochastic else 1
    dtype = next(gen.parameters()).dtype
    xs, alphas, betas = [], [], []
    was_training = gen.training
    gen.eval()
    try:
        with torch.no_grad():
            for r in range(n_passes):
                rng = torch.Generator().manual_seed(cfg.seed + r)
                outs = []
                for i in range(0, len(x), cfg.batch_size):
                    chunk = torch.as_tensor(x[i:i + cfg.batch_size], dtype=dtype)
                    outs.append(gen(chunk, dropout_active=stochastic, generator=rng))
                xs.append(np.concatenate([o.x_hat.double().numpy() for o in outs]))
                alphas.append(np.concatenate([o.alpha_hat.double().numpy() for o in outs]))
                betas.append(np.concatenate([o.beta_hat.double().numpy() for o in outs]))
    finally:
        gen.train(was_training)
    return np.stack(xs), np.stack(alphas), np.stack(betas)


def aggregate_passes(x_passes, alpha_passes, beta_passes, aleatoric="mean_params"):
    """Combine per-pass outputs into mean parameter maps and uncertainty maps.

    The epistemic variance uses divisor R; the aleatoric variance is by default
    evaluated on the pass-averaged scale and shape.
    """
    x_mean = x_passes.mean(axis=0)
    alpha_mean = alpha_passes.mean(axis=0)
    beta_mean = beta_passes.mean(axis=0)
    if aleatoric == "mean_params":
        var_a = ggd_variance(alpha_mean, beta_mean)
    else:
        var_a = ggd_variance(alpha_passes, beta_passes).mean(axis=0)
    var_e = ((x_passes - x_mean) ** 2).mean(axis=0)
    return GGDParamMaps(x_mean, alpha_mean, beta_mean), UncertaintyMaps.from_variances(var_a, var_e)


def mc_predict(gen, slab, cfg: InferenceConfig = InferenceConfig()):
    """Monte Carlo dropout prediction for a batch of slabs.

    Pass ``r`` draws its dropout masks from a generator seeded with
    ``cfg.seed + r``. With dropout inactive (or a zero dropout rate) all passes
    coincide, so a single pass is run and the epistemic term is exactly zero.

    Returns
    -------
    params : GGDParamMaps
        Pass-averaged prediction, scale and shape (numpy, float64).
    uncertainty : UncertaintyMaps
    """
    x = slab.data if isinstance(slab, SlabBatch) else np.asarray(slab)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    params, unc = aggregate_passes(*_passes(gen, x, cfg), aleatoric=cfg.aleatoric)
    if squeeze:
        params = GGDParamMaps(params.x_hat[0], params.alpha_hat[0], params.beta_hat[0])
        unc = UncertaintyMaps(unc.sigma_aleatoric[0], unc.sigma_epistemic[0], unc.sigma[0])
    return params, unc


def merge_slabs(slab_outputs, depth=None) -> np.ndarray:
    """Moving-window average of overlapping slab outputs into a volume.

    ``slab_outputs`` is a sequence of ``(array C x H x W, (start, stop))``.
    Each voxel is the mean of every slab slice covering it.
    """
    slab_outputs = list(slab_outputs)
    if not slab_outputs:
        raise ValueError("no slabs to merge")
    shape = np.shape(slab_outputs[0][0])[1:]
    stop_max = max(stop for _, (_, stop) in slab_outputs)
    depth = stop_max if depth is None else depth
    acc = np.zeros((depth, *shape))
    counts = np.zeros(depth, dtype=np.int64)
    for arr, (start, stop) in slab_outputs:
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape[0] != stop - start or arr.shape[1:] != shape:
            raise ValueError(f"slab of shape {arr.shape} does not match span {(start, stop)}")
        if start < 0 or stop > depth:
            raise ValueError(f"span {(start, stop)} outside volume depth {depth}")
        acc[start:stop] += arr
        counts[start:stop] += 1
    gaps = np.flatnonzero(counts == 0)
    if gaps.size:
        raise ValueError(f"slices not covered by any slab: {gaps.tolist()}")
    return acc / counts[:, None, None]


def predict_volume(gen, vol: Volume, cfg: InferenceConfig = InferenceConfig(), stride: int = 1) -> dict:
    """Slab-wise MC prediction merged back to a 3D bundle of maps.

    Standard-deviation maps are merged as variances and square-rooted afterwards,
    so ``sigma**2 == sigma_aleatoric**2 + sigma_epistemic**2`` survives merging.
    """
    slabs = extract_slabs(vol, gen.cfg.in_channels, stride)
    params, unc = mc_predict(gen, slabs, cfg)
    depth = vol.shape[0]

    def merged(maps):
        return merge_slabs(zip(maps, slabs.spans), depth)

    var_a = merged(unc.sigma_aleatoric**2)
    var_e = merged(unc.sigma_epistemic**2)
    sig = UncertaintyMaps.from_variances(var_a, var_e)
    return {
        "prediction": merged(params.x_hat),
        "alpha": merged(params.alpha_hat),
        "beta": merged(params.beta_hat),
        "sigma_aleatoric": sig.sigma_aleatoric,
        "sigma_epistemic": sig.sigma_epistemic,
        "sigma": sig.sigma,
    }


def write_bundle(out_dir, volume_id, bundle, spacing=(1.0, 1.0, 1.0), render=False, **manifest):
    """Write each map as a raw float32 volume with manifest; optionally PNG slices."""
    out_dir = Path(out_dir)
    for key in BUNDLE_KEYS:
        write_volume(out_dir / f"{volume_id}.{key}", Volume(bundle[key], spacing),
                     volume_id=volume_id, map=key, **manifest)
    if render:
        render_slices(out_dir / "png", volume_id, bundle)


def render_slices(out_dir, volume_id, bundle):
    """Grayscale PNG per slice and map, each map scaled by its own maximum."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for key in BUNDLE_KEYS:
        vol = np.asarray(bundle[key], dtype=np.float64)
        top = vol.max() if vol.max() > 0 else 1.0
        for k, sl in enumerate(vol):
            img = np.clip(sl / top * 255.0, 0, 255).astype(np.uint8)
            Image.fromarray(img).save(out_dir / f"{volume_id}.{key}.{k:03d}.png")
