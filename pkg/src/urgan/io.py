"""On-disk formats: raw little-endian float32 volumes with JSON sidecar manifests."""

import json
from pathlib import Path

import numpy as np

from .data_sim import Volume

RAW_DTYPE = "<f4"


def write_json(path, obj):
    """Deterministic JSON (sorted keys, fixed indentation, trailing newline)."""
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_raw(path, array):
    """Store as little-endian float32; magnitudes beyond float32 range become inf."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with np.errstate(over="ignore"):
        data = np.ascontiguousarray(array, dtype=RAW_DTYPE)
    data.tofile(path)


def read_raw(path, shape):
    data = np.fromfile(path, dtype=RAW_DTYPE)
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {int(np.prod(shape))} values, found {data.size}")
    return data.reshape(shape).astype(np.float64)


def _with(stem, suffix):
    # stems may contain dots ("vol_000.sigma"), so append rather than replace
    return Path(str(stem) + suffix)


def write_volume(stem, vol: Volume, **extra):
    """Write ``<stem>.raw`` and ``<stem>.json``; returns the manifest."""
    raw = _with(stem, ".raw")
    write_raw(raw, vol.data)
    manifest = {"shape": list(vol.shape), "spacing": list(vol.spacing), "dtype": RAW_DTYPE,
                "file": raw.name, **extra}
    write_json(_with(stem, ".json"), manifest)
    return manifest


def read_volume(stem) -> tuple[Volume, dict]:
    manifest = read_json(_with(stem, ".json"))
    data = read_raw(Path(stem).parent / manifest["file"], manifest["shape"])
    return Volume(data, manifest.get("spacing", (1.0, 1.0, 1.0))), manifest


def normalize_percentile(data, q=99.5):
    """Scale to [0, 1] by the ``q``-th percentile, clipping above it."""
    data = np.asarray(data, dtype=np.float64)
    top = np.percentile(data, q)
    if top <= 0:
        raise ValueError("volume has no positive intensities")
    return np.clip(data / top, 0.0, 1.0)


def load_nifti(path, normalize=True) -> Volume:
    """Read a NIfTI volume (needs ``nibabel``), slices first along the last axis."""
    try:
        import nibabel as nib
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise ImportError("reading NIfTI files requires nibabel (pip install urgan[nifti])") from exc
    img = nib.load(str(path))
    data = np.asarray(img.get_fdata(), dtype=np.float64)
    if data.ndim == 4 and data.shape[-1] == 1:
        data = data[..., 0]
    if data.ndim != 3:
        raise ValueError(f"expected a 3D volume, got shape {data.shape}")
    zooms = img.header.get_zooms()[:3]
    # axial slices first: (x, y, z) -> (z, y, x)
    data = np.transpose(data, (2, 1, 0))
    if normalize:
        data = normalize_percentile(data)
    return Volume(data, (float(zooms[2]), float(zooms[1]), float(zooms[0])))
