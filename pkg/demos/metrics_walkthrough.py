"""Balance error rate and CIELAB RMSE on hand-built cases."""

import numpy as np

from argan.metrics import ber, lab_to_rgb, rgb_to_lab, rmse_lab

gt = np.array([[1, 1], [0, 0]])
for name, pred in [("exact", gt), ("all shadow", np.ones_like(gt)), ("half the shadow", np.array([[1, 0], [0, 0]]))]:
    print(f"BER {name:>16}: {ber(pred, gt).ber:5.1f}")

print("white ->", np.round(rgb_to_lab([1.0, 1.0, 1.0]), 3))
print("mid gray 119/255 ->", np.round(rgb_to_lab([119 / 255] * 3), 3))

rng = np.random.default_rng(0)
img = rng.uniform(0.2, 0.8, (16, 16, 3))
lighter = lab_to_rgb(rgb_to_lab(img) + [1.0, 0.0, 0.0])
print(f"RMSE after +1 L shift: {rmse_lab(lighter, img):.4f} (1/sqrt(3) = {3 ** -0.5:.4f})")

mask = (rng.uniform(size=(16, 16)) > 0.7).astype(int)
s, n, a = (rmse_lab(lighter * 0.97, img, mask, r) for r in ("shadow", "nonshadow", "all"))
print(f"S={s:.3f} N={n:.3f} A={a:.3f}")
