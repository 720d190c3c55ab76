"""Per-slice quality reports, residual/uncertainty correlations and lesion analysis."""

import csv
import math
from pathlib import Path

import numpy as np

from .data_sim import Volume
from .io import read_volume, write_json, write_volume
from .metrics import AnalysisConfig, beta_trend, correlate, masked_uncertainty, mass_fraction_inside, psnr, rrmse, ssim

CSV_COLUMNS = ("volume_id", "slice", "NL", "ssim", "psnr", "rrmse", "mean_sigma", "mean_beta", "mean_alpha",
               "mean_abs_residual")


def volume_ids(directory, suffix):
    """Volume ids in ``directory`` having a ``<id><suffix>.json`` manifest."""
    tail = suffix + ".json"
    return sorted(p.name[: -len(tail)] for p in Path(directory).glob(f"*{tail}"))


def check_matching(pred_ids, ref_ids, where=""):
    pred_ids, ref_ids = set(pred_ids), set(ref_ids)
    if pred_ids != ref_ids:
        lines = []
        if pred_ids - ref_ids:
            lines.append(f"predictions without reference: {sorted(pred_ids - ref_ids)}")
        if ref_ids - pred_ids:
            lines.append(f"references without prediction: {sorted(ref_ids - pred_ids)}")
        raise ValueError(f"unmatched volume ids{where}: " + "; ".join(lines))


def slice_rows(volume_id, level, pred, ref, sigma, beta, alpha):
    """One report row per slice of a predicted volume."""
    rows = []
    for k in range(ref.shape[0]):
        p, r = pred[k], ref[k]
        rows.append({
            "volume_id": volume_id, "slice": k, "NL": level,
            "ssim": ssim(r, p), "psnr": psnr(r, p), "rrmse": rrmse(r, p),
            "mean_sigma": float(sigma[k].mean()), "mean_beta": float(beta[k].mean()),
            "mean_alpha": float(alpha[k].mean()), "mean_abs_residual": float(np.abs(p - r).mean()),
        })
    return rows


def _fmt(v):
    # repr keeps full precision; inf is written as "inf"
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _stats(values):
    vals = np.asarray(values, dtype=np.float64)
    finite = vals[np.isfinite(vals)]
    return {"mean": float(finite.mean()) if finite.size else float("inf"),
            "std": float(finite.std()) if finite.size else 0.0,
            "n": int(vals.size), "n_inf": int(np.isinf(vals).sum())}


def _safe_corr(x, y):
    try:
        return correlate(x, y)
    except ValueError:
        return None


def evaluate_levels(pred_root, ref_dir, levels):
    """Rows and pooled maps for every noise level found under ``pred_root``."""
    ref_ids = volume_ids(ref_dir, "")
    rows, betas, alphas, psnrs = [], {}, {}, {}
    for level in levels:
        pred_dir = Path(pred_root) / level
        ids = volume_ids(pred_dir, ".prediction")
        check_matching(ids, ref_ids, f" at {level}")
        betas[level], alphas[level], psnrs[level] = [], [], []
        for vid in ids:
            ref, _ = read_volume(Path(ref_dir) / vid)
            maps = {k: read_volume(pred_dir / f"{vid}.{k}")[0].data for k in ("prediction", "sigma", "beta", "alpha")}
            if maps["prediction"].shape != ref.shape:
                raise ValueError(f"{level}/{vid}: prediction shape {maps['prediction'].shape} != reference {ref.shape}")
            new = slice_rows(vid, level, maps["prediction"], ref.data, maps["sigma"], maps["beta"], maps["alpha"])
            rows.extend(new)
            betas[level].append(maps["beta"])
            alphas[level].append(maps["alpha"])
            psnrs[level].extend(r["psnr"] for r in new)
    return rows, betas, alphas, psnrs


def summarise(rows, betas, alphas, psnrs) -> dict:
    levels = sorted(betas)
    per_level = {}
    for level in levels:
        sel = [r for r in rows if r["NL"] == level]
        per_level[level] = {m: _stats([r[m] for r in sel]) for m in ("ssim", "psnr", "rrmse")}
    res = [r["mean_abs_residual"] for r in rows]
    trend = beta_trend(betas, alphas, {k: [p for p in v if math.isfinite(p)] or [float("inf")] for k, v in psnrs.items()})
    return {
        "per_level": per_level,
        "correlation": {
            "n_images": len(rows),
            "residual_vs_sigma": _safe_corr(res, [r["mean_sigma"] for r in rows]),
            "residual_vs_beta": _safe_corr(res, [r["mean_beta"] for r in rows]),
        },
        "beta_trend": {"rows": trend.rows(), "decreasing": trend.decreasing},
        "scatter": [{"volume_id": r["volume_id"], "slice": r["slice"], "NL": r["NL"],
                     "mean_abs_residual": r["mean_abs_residual"], "mean_sigma": r["mean_sigma"],
                     "mean_beta": r["mean_beta"]} for r in rows],
    }


def lesion_analysis(pred_dir, lesion_dir, out_dir, cfg: AnalysisConfig):
    """Masked uncertainty per lesion volume and its mass share inside the lesion support."""
    ref_dir = Path(lesion_dir) / "reference"
    ids = volume_ids(pred_dir, ".prediction")
    check_matching(ids, volume_ids(ref_dir, ""), " in the lesion subset")
    out = []
    for vid in ids:
        ref, _ = read_volume(ref_dir / vid)
        support, _ = read_volume(Path(lesion_dir) / "support" / vid)
        pred = read_volume(Path(pred_dir) / f"{vid}.prediction")[0].data
        sigma = read_volume(Path(pred_dir) / f"{vid}.sigma")[0].data
        masked = masked_uncertainty(pred - ref.data, sigma, cfg)
        write_volume(Path(out_dir) / f"{vid}.masked_sigma", Volume(masked, ref.spacing), volume_id=vid, tau=cfg.tau)
        inside, area = mass_fraction_inside(masked, support.data > 0)
        out.append({"volume_id": vid, "inside_fraction": inside, "area_fraction": area,
                    "masked_mass": float(masked.sum()), "concentrated": bool(inside > area)})
    return {"tau": cfg.tau, "volumes": out,
            "mean_inside_fraction": float(np.nanmean([o["inside_fraction"] for o in out])) if out else None,
            "mean_area_fraction": float(np.mean([o["area_fraction"] for o in out])) if out else None}


def evaluate(pred_root, dataset_dir, out_dir, cfg: AnalysisConfig = AnalysisConfig()) -> dict:
    """Write ``metrics.csv`` and ``summary.json`` under ``out_dir``; returns the summary."""
    pred_root, dataset_dir, out_dir = Path(pred_root), Path(dataset_dir), Path(out_dir)
    levels = sorted(p.name for p in pred_root.iterdir() if p.is_dir() and p.name.startswith("NL"))
    if not levels:
        raise ValueError(f"no noise-level prediction folders under {pred_root}")
    rows, betas, alphas, psnrs = evaluate_levels(pred_root, dataset_dir / "test" / "reference", levels)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "metrics.csv", rows)
    summary = summarise(rows, betas, alphas, psnrs)
    if (pred_root / "lesion").is_dir() and (dataset_dir / "lesion").is_dir():
        summary["lesion"] = lesion_analysis(pred_root / "lesion", dataset_dir / "lesion", out_dir / "lesion", cfg)
    write_json(out_dir / "summary.json", summary)
    return summary
