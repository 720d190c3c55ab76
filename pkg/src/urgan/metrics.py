"""Image-quality metrics and uncertainty analyses."""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class AnalysisConfig:
    tau: float = 0.17
    correlation: str = "pearson"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.correlation != "pearson":
            raise ValueError(f"unsupported correlation {self.correlation!r}")


def rrmse(a, b) -> float:
    """Relative RMSE ``||a - b||_F / ||a||_F`` with ``a`` the reference."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    ref = np.linalg.norm(a.ravel())
    if ref == 0:
        raise ValueError("reference image has zero norm")
    return float(np.linalg.norm((a - b).ravel()) / ref)


def psnr(a, b, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are identical."""
    if not data_range > 0:
        raise ValueError("data_range must be > 0")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(data_range**2 / mse))


def _gaussian_window(size=SSIM_WIN, sigma=SSIM_SIGMA):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _local_mean(img, g):
    # separable "valid" correlation: windows must fit entirely inside the image
    rows = sliding_window_view(img, len(g), axis=0) @ g
    return sliding_window_view(rows, len(g), axis=1) @ g


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean structural similarity of two 2D images.

    Uses an 11x11 Gaussian window (sigma 1.5), ``K1 = 0.01``, ``K2 = 0.03`` and
    population covariances, averaged over every full window position.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError("ssim expects two 2D images of equal shape")
    if min(a.shape) < SSIM_WIN:
        raise ValueError(f"images must be at least {SSIM_WIN} pixels on each side")
    g = _gaussian_window()
    mu_a, mu_b = _local_mean(a, g), _local_mean(b, g)
    var_a = _local_mean(a * a, g) - mu_a * mu_a
    var_b = _local_mean(b * b, g) - mu_b * mu_b
    cov = _local_mean(a * b, g) - mu_a * mu_b
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def correlate(x, y) -> float:
    """Pearson correlation of two equal-length score lists."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError("score lists differ in length")
    if x.size < 3:
        raise ValueError("need at least 3 points")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("scores must be finite")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = np.dot(dx, dx), np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise ValueError("zero variance")
    return float(np.clip(np.dot(dx, dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def masked_uncertainty(residual, sigma, cfg: AnalysisConfig = AnalysisConfig()):
    """Uncertainty kept only where the absolute residual exceeds ``cfg.tau``."""
    residual = np.asarray(residual)
    sigma = np.asarray(sigma)
    if residual.shape != sigma.shape:
        raise ValueError("shape mismatch")
    return np.where(np.abs(residual) > cfg.tau, sigma, np.zeros_like(sigma))


def mass_fraction_inside(values, region) -> tuple[float, float]:
    """Share of ``values``' total mass inside ``region`` and the region's area share."""
    values = np.asarray(values, dtype=np.float64)
    region = np.asarray(region, dtype=bool)
    total = values.sum()
    inside = values[region].sum() / total if total > 0 else float("nan")
    return float(inside), float(region.mean())


@dataclass
class BetaTrend:
    levels: list
    mean_beta: dict
    mean_alpha: dict = field(default_factory=dict)
    mean_psnr: dict = field(default_factory=dict)

    @property
    def decreasing(self) -> bool:
        vals = [self.mean_beta[k] for k in self.levels]
        return all(a > b for a, b in zip(vals, vals[1:]))

    def rows(self):
        return [
            {"NL": k, "mean_beta": self.mean_beta[k],
             "mean_alpha": self.mean_alpha.get(k), "mean_psnr": self.mean_psnr.get(k)}
            for k in self.levels
        ]


def _pooled_mean(arrays):
    arrays = list(arrays)
    total = sum(float(np.sum(a, dtype=np.float64)) for a in arrays)
    count = sum(np.size(a) for a in arrays)
    return total / count


def beta_trend(beta_maps, alpha_maps=None, psnrs=None) -> BetaTrend:
    """Per-noise-level means of beta (and optionally alpha and output PSNR).

    ``beta_maps`` maps a level id (``"NL0"`` ...) to a list of volumes; levels
    are ordered by their sorted ids.
    """
    if not beta_maps:
        raise ValueError("no noise levels given")
    levels = sorted(beta_maps)
    trend = BetaTrend(levels, {k: _pooled_mean(beta_maps[k]) for k in levels})
    if alpha_maps is not None:
        missing = set(levels) - set(alpha_maps)
        if missing:
            raise ValueError(f"alpha maps missing for {sorted(missing)}")
        trend.mean_alpha = {k: _pooled_mean(alpha_maps[k]) for k in levels}
    if psnrs is not None:
        trend.mean_psnr = {k: float(np.mean(psnrs[k])) for k in levels}
    return trend
