"""Walkthrough: deletion/insertion faithfulness curves and their AUCs.

Uses a scorer with known behavior (correct while a designated region stays
at least half intact) so the curves have exact expected shapes: an
informative map kills accuracy quickly under deletion and restores it
quickly under insertion, while an uninformative map does neither.

Run from the repo root:  python3 demos/02_faithfulness_curves.py
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from stubs import RegionScorer  # noqa: E402

from cci import StepSchedule, TextEmbeddingBank, deletion_curve, insertion_curve  # noqa: E402
from cci.faithfulness import write_curves_csv  # noqa: E402

OUT = Path(__file__).parent / "out" / "faithfulness"
OUT.mkdir(parents=True, exist_ok=True)

SIDE = 40
rng = np.random.default_rng(0)
image = rng.uniform(0.5, 1.5, size=(3, SIDE, SIDE)).astype(np.float32)

region = np.zeros((SIDE, SIDE), dtype=bool)
region[24:32, :] = True  # the pixels the scorer actually relies on

bank = TextEmbeddingBank(labels=["target", "decoy"], vectors=np.eye(4, dtype=np.float32)[:2])
scorer = RegionScorer(image, region, bank.vectors[0], bank.vectors[1])
schedule = StepSchedule(steps=100, fraction_per_step=0.005, noise_seed=0)

maps = {"informative": region.astype(float), "uniform": np.zeros((SIDE, SIDE))}

print(f"{'map':>12} {'deletion AUC@1':>15} {'insertion AUC@1':>16}")
for name, pixel_map in maps.items():
    deletion = deletion_curve(scorer, image, pixel_map, bank, "target", schedule)
    insertion = insertion_curve(scorer, image, pixel_map, bank, "target", schedule)
    print(f"{name:>12} {deletion['top1'].auc:>15.4f} {insertion['top1'].auc:>16.4f}")
    write_curves_csv(OUT / f"deletion_{name}.csv", deletion, schedule, SIDE * SIDE)
    write_curves_csv(OUT / f"insertion_{name}.csv", insertion, schedule, SIDE * SIDE)

print("\nlower deletion AUC and higher insertion AUC mean the map found the")
print(f"pixels the scorer depends on; CSVs are under {OUT}")
