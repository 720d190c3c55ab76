"""Paired-dataset simulation: phantoms, k-space undersampling, noise and lesions."""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .metrics import psnr

# tissue labels: background, scalp, CSF, grey matter, white matter
LABEL_NAMES = ("background", "scalp", "csf", "gm", "wm")
T1_TABLE = np.array([0.0, 0.9, 0.2, 0.55, 0.8])
# decreasing in T1 over foreground tissues, as in T2-weighted contrast
T2_TABLE = np.array([0.0, 0.3, 0.95, 0.65, 0.45])

NOISE_LEVELS = ("NL0", "NL1", "NL2", "NL3")
QE_TARGET_PSNR = (21.0, 18.0, 16.0, 14.0)
# MP training data is clean, so NL0 carries no noise target
MP_TARGET_PSNR = (None, 18.0, 16.0, 14.0)


@dataclass
class Volume:
    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError("a volume is a 3D array")
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def shape(self):
        return self.data.shape


@dataclass
class SamplingMask:
    """Binary k-space mask in centred layout (DC at ``H // 2``); rows are phase-encode lines."""

    grid: np.ndarray
    coverage_fraction: float

    @property
    def shape(self):
        return self.grid.shape


@dataclass(frozen=True)
class NoiseLevelSpec:
    level_id: str
    domain: str
    sigma: float
    target_psnr_db: float | None = None

    def __post_init__(self):
        if self.level_id not in NOISE_LEVELS:
            raise ValueError(f"unknown noise level {self.level_id!r}")
        if self.domain not in ("kspace", "image"):
            raise ValueError(f"unknown noise domain {self.domain!r}")
        if not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")


@dataclass(frozen=True)
class LesionSpec:
    center: tuple
    radius: float
    t1_intensity_delta: float
    t2_intensity_delta: float
    # outer fraction of the radius over which the perturbation is cosine-tapered
    taper: float = 0.3


@dataclass
class SlabBatch:
    """Stack of 2.5D slabs (N x C x H x W) with the slice span each one covers."""

    data: np.ndarray
    spans: list = field(default_factory=list)

    @property
    def centers(self):
        return [(a + b - 1) // 2 for a, b in self.spans]


def _rng(seed):
    return np.random.default_rng(seed)


# --------------------------------------------------------------------------
# phantoms


def make_phantom_labels(seed, size) -> np.ndarray:
    """Integer tissue-label volume of nested, jittered ellipsoids."""
    D, H, W = size
    rng = _rng(seed)
    z, y, x = np.meshgrid(np.linspace(-1, 1, D), np.linspace(-1, 1, H), np.linspace(-1, 1, W), indexing="ij")

    def jitter(s):
        return rng.uniform(-s, s)

    def ellipsoid(center, axes):
        return (((z - center[0]) / axes[0]) ** 2 + ((y - center[1]) / axes[1]) ** 2
                + ((x - center[2]) / axes[2]) ** 2) <= 1.0

    labels = np.zeros(size, dtype=np.int8)
    head = ellipsoid((0, jitter(0.03), jitter(0.03)), (1.6, 0.88 + jitter(0.03), 0.72 + jitter(0.03)))
    brain = ellipsoid((0, jitter(0.03), jitter(0.03)), (1.5, 0.8 + jitter(0.03), 0.64 + jitter(0.03)))
    labels[head] = 1
    labels[brain] = 3
    wm = ellipsoid((0, jitter(0.05), jitter(0.05)), (1.3, 0.6 + jitter(0.05), 0.46 + jitter(0.04)))
    labels[wm & brain] = 4
    for side in (-1, 1):
        ventricle = ellipsoid((jitter(0.2), jitter(0.1), side * (0.12 + jitter(0.03))),
                              (1.0, 0.3 + jitter(0.05), 0.06 + jitter(0.02)))
        labels[ventricle & brain] = 2
    for _ in range(4):
        center = (jitter(0.6), jitter(0.5), jitter(0.4))
        axes = (rng.uniform(0.2, 0.5), rng.uniform(0.06, 0.14), rng.uniform(0.06, 0.14))
        labels[ellipsoid(center, axes) & brain] = 3
    return labels


def make_phantom(seed, size, paired=False, smoothing=0.8, spacing=(1.0, 1.0, 1.0)):
    """Deterministic phantom volume with piecewise-constant tissue intensities.

    ``smoothing`` is an in-plane Gaussian partial-volume blur in voxels (0 keeps
    hard tissue edges). With ``paired=True`` returns ``(t1_like, t2_like)``
    obtained from the same label map through :data:`T1_TABLE` and :data:`T2_TABLE`.
    """
    labels = make_phantom_labels(seed, size)

    def render(table):
        vol = table[labels]
        if smoothing > 0:
            vol = ndimage.gaussian_filter(vol, (0, smoothing, smoothing), mode="constant")
        return Volume(np.clip(vol, 0.0, 1.0), spacing)

    if paired:
        return render(T1_TABLE), render(T2_TABLE)
    return render(T1_TABLE)


# --------------------------------------------------------------------------
# k-space


def make_mask(shape, coverage, seed=None, center_fraction=0.08, density="gaussian", width=0.2) -> SamplingMask:
    """Cartesian row mask: a fully sampled central band plus random extra rows.

    Extra rows are drawn without replacement, either uniformly or with a
    Gaussian density over the normalised phase-encode coordinate (``width`` is
    its standard deviation relative to the half-extent).
    """
    H, W = shape
    if not 0 < coverage <= 1:
        raise ValueError("coverage must lie in (0, 1]")
    if coverage < center_fraction:
        raise ValueError("coverage is below the fully sampled central band")
    n_rows = int(round(coverage * H))
    n_center = max(1, int(round(center_fraction * H)))
    rows = np.zeros(H, dtype=bool)
    start = H // 2 - n_center // 2
    rows[start:start + n_center] = True
    rest = np.flatnonzero(~rows)
    n_extra = max(0, n_rows - n_center)
    if n_extra:
        if density == "uniform":
            p = None
        elif density == "gaussian":
            k = (rest - H // 2) / (H / 2)
            p = np.exp(-0.5 * (k / width) ** 2)
            p /= p.sum()
        else:
            raise ValueError(f"unknown density {density!r}")
        rows[_rng(seed).choice(rest, n_extra, replace=False, p=p)] = True
    grid = np.repeat(rows[:, None], W, axis=1).astype(np.uint8)
    return SamplingMask(grid, float(grid.mean()))


def kspace(img) -> np.ndarray:
    """Centred 2D DFT (unnormalised forward transform)."""
    return np.fft.fftshift(np.fft.fft2(img))


def undersample_kspace(hq, mask: SamplingMask, sigma_k: float, seed=None) -> np.ndarray:
    """Zero-filled magnitude reconstruction of noisy, masked k-space.

    ``|IFFT((FFT(hq) + noise) * mask)|`` with complex noise whose real and
    imaginary parts are i.i.d. ``N(0, sigma_k**2)``.
    """
    hq = np.asarray(hq, dtype=np.float64)
    if hq.shape != mask.shape:
        raise ValueError(f"slice shape {hq.shape} != mask shape {mask.shape}")
    if sigma_k < 0:
        raise ValueError("sigma_k must be >= 0")
    k = kspace(hq)
    if sigma_k > 0:
        rng = _rng(seed)
        k = k + sigma_k * (rng.standard_normal(k.shape) + 1j * rng.standard_normal(k.shape))
    return np.abs(np.fft.ifft2(np.fft.ifftshift(k * mask.grid)))


def add_image_noise(img, sigma_i: float, seed=None) -> np.ndarray:
    """Add i.i.d. Gaussian noise; values are deliberately not clipped."""
    img = np.asarray(img, dtype=np.float64)
    if sigma_i < 0:
        raise ValueError("sigma_i must be >= 0")
    if sigma_i == 0:
        return img.copy()
    return img + sigma_i * _rng(seed).standard_normal(img.shape)


def corrupt_volume(vol: Volume, domain: str, sigma: float, seed=None, mask: SamplingMask | None = None) -> Volume:
    """Slice-wise QE (k-space) or MP (image-space) corruption of a whole volume.

    Slices draw from one generator in slice order, so the result depends only
    on ``seed``.
    """
    rng = _rng(seed)
    if domain == "kspace":
        if mask is None:
            raise ValueError("k-space corruption needs a sampling mask")
        out = np.stack([undersample_kspace(s, mask, sigma, rng) for s in vol.data])
    elif domain == "image":
        out = add_image_noise(vol.data, sigma, rng)
    else:
        raise ValueError(f"unknown domain {domain!r}")
    return Volume(out, vol.spacing)


def mean_slice_psnr(reference: list, corrupted: list) -> float:
    vals = [psnr(r, c, 1.0) for rv, cv in zip(reference, corrupted) for r, c in zip(rv.data, cv.data)]
    return float(np.mean(vals))


def calibrate_noise(clean_set, target_psnr_db, domain, mask=None, level_id="NL1", seed=0,
                    tol_db=0.25, max_iter=80) -> NoiseLevelSpec:
    """Find the noise magnitude giving ``target_psnr_db`` mean slice PSNR.

    Bisection on sigma with the noise realisation fixed per volume (volume ``i``
    uses seed ``seed + i``), so the mean PSNR is a smooth decreasing function of
    sigma. The returned sigma lands within ``tol_db`` of the target.
    """
    clean_set = list(clean_set)
    if not clean_set:
        raise ValueError("empty calibration set")

    def measure(sigma):
        corrupted = [corrupt_volume(v, domain, sigma, seed + i, mask) for i, v in enumerate(clean_set)]
        return mean_slice_psnr(clean_set, corrupted)

    p0 = measure(0.0)
    if target_psnr_db > p0 + tol_db:
        raise ValueError(f"target {target_psnr_db} dB is not reachable; noise-free PSNR is {p0:.2f} dB")
    if abs(target_psnr_db - p0) <= tol_db:
        return NoiseLevelSpec(level_id, domain, 0.0, target_psnr_db)

    lo, hi = 0.0, 1e-3
    while measure(hi) > target_psnr_db:
        lo, hi = hi, hi * 2.0
        if hi > 1e12:
            raise ValueError("could not bracket the target PSNR")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi) if lo == 0 else np.sqrt(lo * hi)
        p = measure(mid)
        if abs(p - target_psnr_db) <= tol_db / 10:
            return NoiseLevelSpec(level_id, domain, float(mid), target_psnr_db)
        if p > target_psnr_db:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    if abs(measure(mid) - target_psnr_db) > tol_db:
        raise ValueError("bisection did not converge")
    return NoiseLevelSpec(level_id, domain, float(mid), target_psnr_db)


def calibrate_levels(clean_set, targets, domain, mask=None, seed=0, fixed=None) -> list:
    """Calibrate NL0..NL3; a ``None`` target or an entry in ``fixed`` pins that sigma."""
    fixed = fixed or {}
    specs = []
    for level, target in zip(NOISE_LEVELS, targets):
        if level in fixed:
            specs.append(NoiseLevelSpec(level, domain, float(fixed[level]), target))
        elif target is None:
            specs.append(NoiseLevelSpec(level, domain, 0.0, None))
        else:
            specs.append(calibrate_noise(clean_set, target, domain, mask, level, seed))
    sigmas = [s.sigma for s in specs]
    if any(b <= a for a, b in zip(sigmas, sigmas[1:])):
        raise ValueError(f"noise magnitudes must increase across levels, got {sigmas}")
    return specs


# --------------------------------------------------------------------------
# lesions and slabs


def foreground_mask(vol: Volume, threshold=0.1) -> np.ndarray:
    return vol.data > threshold


def lesion_weights(shape, spec: LesionSpec) -> np.ndarray:
    """Lesion profile: 1 in the core, cosine taper to 0 at ``spec.radius``."""
    grids = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in shape), indexing="ij")
    dist = np.sqrt(sum((g - c) ** 2 for g, c in zip(grids, spec.center)))
    r = float(spec.radius)
    if r <= 0:
        return np.zeros(shape)
    core = (1.0 - spec.taper) * r
    w = np.where(dist <= core, 1.0, 0.0)
    ramp = (dist > core) & (dist < r)
    w[ramp] = 0.5 * (1.0 + np.cos(np.pi * (dist[ramp] - core) / (r - core)))
    return w


def insert_lesion(pair, spec: LesionSpec, foreground=None):
    """Add a tapered spherical lesion to both volumes of a (t1, t2) pair.

    Voxels outside the lesion support are returned bitwise unchanged; inside it
    intensities are clipped to ``[0, 1]``.
    """
    t1, t2 = pair
    if t1.shape != t2.shape:
        raise ValueError("pair volumes differ in shape")
    r = float(spec.radius)
    if any(c - r < 0 or c + r > n - 1 for c, n in zip(spec.center, t1.shape)) and r > 0:
        raise ValueError("lesion extends outside the volume")
    w = lesion_weights(t1.shape, spec)
    support = w > 0
    if foreground is None:
        foreground = foreground_mask(t1)
    if np.any(support & ~foreground):
        raise ValueError("lesion support leaves the foreground")
    out = []
    for vol, delta in ((t1, spec.t1_intensity_delta), (t2, spec.t2_intensity_delta)):
        data = vol.data.copy()
        if delta != 0:
            data[support] = np.clip(data[support] + delta * w[support], 0.0, 1.0)
        out.append(Volume(data, vol.spacing))
    return tuple(out)


def random_lesion(vol: Volume, seed, radius=(3.0, 5.0), t1_delta=-0.35, t2_delta=0.45, tries=200) -> LesionSpec:
    """Sample a lesion whose support lies inside the brain region of ``vol``."""
    rng = _rng(seed)
    fg = ndimage.binary_erosion(foreground_mask(vol, 0.3), iterations=1)
    D, H, W = vol.shape
    for _ in range(tries):
        r = rng.uniform(*radius)
        if 2 * r >= min(D, H, W) - 1:
            continue
        center = (rng.uniform(r, D - 1 - r), rng.uniform(r, H - 1 - r), rng.uniform(r, W - 1 - r))
        spec = LesionSpec(tuple(float(c) for c in center), float(r), t1_delta, t2_delta)
        support = lesion_weights(vol.shape, spec) > 0
        if support.any() and not np.any(support & ~fg) and all(
            c - r >= 0 and c + r <= n - 1 for c, n in zip(center, vol.shape)
        ):
            return spec
    raise ValueError("could not place a lesion inside the foreground")


def slab_centers(depth, slab_depth, stride=1):
    if slab_depth % 2 == 0 or slab_depth < 1:
        raise ValueError("slab depth must be a positive odd number")
    if slab_depth > depth:
        raise ValueError(f"slab depth {slab_depth} exceeds volume depth {depth}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    half = slab_depth // 2
    centers = list(range(half, depth - half, stride))
    # keep the last slices covered when the stride does not land on them
    if centers[-1] != depth - 1 - half:
        centers.append(depth - 1 - half)
    return centers


def extract_slabs(vol: Volume, slab_depth: int = 3, stride: int = 1) -> SlabBatch:
    """Overlapping stacks of ``slab_depth`` adjacent slices, treated as channels."""
    half = slab_depth // 2
    centers = slab_centers(vol.shape[0], slab_depth, stride)
    spans = [(c - half, c + half + 1) for c in centers]
    data = np.stack([vol.data[a:b] for a, b in spans])
    return SlabBatch(data, spans)
