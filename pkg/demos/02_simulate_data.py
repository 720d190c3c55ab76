"""
Simulating paired MRI-like data
===============================

Phantom volumes, an undersampling mask, and noise levels calibrated to fixed
PSNR targets. The same functions back ``urgan simulate``.
"""

import numpy as np

from urgan.data_sim import (
    QE_TARGET_PSNR,
    calibrate_levels,
    corrupt_volume,
    make_mask,
    make_phantom,
    mean_slice_psnr,
)
from urgan.metrics import psnr, ssim

# a handful of 16 x 64 x 64 phantoms; seeds make them reproducible
vols = [make_phantom(seed, (16, 64, 64)) for seed in range(4)]
print("intensity range:", vols[0].data.min(), vols[0].data.max())

# 30% of phase-encode rows, dense around the centre of k-space
mask = make_mask((64, 64), 0.3, seed=0)
print("sampled fraction:", mask.coverage_fraction)

# zero-filled reconstruction without added noise
lq = corrupt_volume(vols[0], "kspace", 0.0, seed=1, mask=mask)
k = 8
print(f"zero-filled slice: PSNR {psnr(vols[0].data[k], lq.data[k]):.2f} dB, SSIM {ssim(vols[0].data[k], lq.data[k]):.3f}")

# calibrate k-space noise so the mean LQ PSNR hits 21/18/16/14 dB
specs = calibrate_levels(vols, QE_TARGET_PSNR, "kspace", mask, seed=0)
for spec in specs:
    noisy = [corrupt_volume(v, "kspace", spec.sigma, 100 + i, mask) for i, v in enumerate(vols)]
    print(f"{spec.level_id}: sigma {spec.sigma:7.3f} -> {mean_slice_psnr(vols, noisy):.2f} dB "
          f"(target {spec.target_psnr_db})")

# paired T1/T2-like contrasts for modality propagation
t1, t2 = make_phantom(0, (16, 64, 64), paired=True)
print("T1/T2 correlation:", np.corrcoef(t1.data.ravel(), t2.data.ravel())[0, 1].round(3))
