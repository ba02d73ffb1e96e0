"""Generate a few synthetic shadow scenes, write them in the A/B/C layout,
and check how well the luminance-ratio matte recovers the darkening.

    python3 demos/synthetic_scenes.py /tmp/scenes
"""

import sys
from pathlib import Path

import numpy as np

from argan.data import derive_matte, gen_synthetic_sample, load_dataset, write_triplet


def main(out="/tmp/argan_scenes", count=4, size=64):
    out = Path(out)
    for seed in range(count):
        t = gen_synthetic_sample(seed, size)
        write_triplet(out, t)
        recovered = derive_matte(t.shadow, t.free)
        inside = t.hard_mask
        err = np.abs(recovered[inside] - (1 - t.alpha) * t.matte[inside]).mean()
        print(f"{t.name}: alpha={t.alpha:.3f} coverage={inside.mean():.0%} "
              f"mean matte error inside shadow={err:.2e}")

    loaded = load_dataset(out)
    print(f"reloaded {len(loaded)} triplets from {out}/A,B,C")


if __name__ == "__main__":
    main(*sys.argv[1:2])
