"""Walkthrough: filing predictions into the error-source taxonomy.

Each misprediction is classified by where its importance map sits (IoU
against a foreground mask vs the background complement) and, for
foreground-driven errors, whether the label pair is visually confusable
according to the similarity judge (offline fixture table here).

Run from the repo root:  python3 demos/03_error_taxonomy.py
"""

import json
from pathlib import Path

import numpy as np

from cci import ClusterSet, FgMask, OfflineJudge, aggregate_taxonomy, classify
from cci.importance import ImportanceMap, ImportanceScore, upsample

OUT = Path(__file__).parent / "out" / "taxonomy"
OUT.mkdir(parents=True, exist_ok=True)

SIZE = 32  # 4x4 patch grid upsampled to 32px


def make_map(assignment, weights):
    assignment = np.asarray(assignment)
    weights = np.asarray(weights, dtype=np.float64)
    score = ImportanceScore(
        base_similarity=0.4,
        cluster_similarities=0.4 - weights,
        drops=weights.copy(),
        weights=weights,
        degenerate=False,
    )
    clusters = ClusterSet(
        k=len(weights), assignment=assignment, centroids=np.zeros((len(weights), 2)),
        objective=0.0, seed=0, normalized=False,
    )
    grid = weights[assignment].reshape(4, 4)
    return ImportanceMap(grid=grid, pixel_map=upsample(grid, SIZE, "nearest"), score=score, clusters=clusters)


# Foreground occupies the top half of the frame.
fg = FgMask(bits=upsample(np.repeat([1.0, 0.0], 8).reshape(4, 4), SIZE, "nearest") == 1.0)

top_heavy = np.repeat([0, 1], 8)  # cluster 0 on the foreground, cluster 1 below
cases = [
    ("img-0", make_map(top_heavy, [0.9, 0.1]), "hen", "hen"),
    ("img-1", make_map(top_heavy, [0.9, 0.1]), "siamang", "chimpanzee"),
    ("img-2", make_map(top_heavy, [0.1, 0.9]), "cat", "airplane"),
    ("img-3", make_map(top_heavy, [0.9, 0.1]), "lion", "bicycle"),
    ("img-4", make_map(top_heavy, [0.9, 0.1]), "border collie", "australian shepherd"),
]

judge = OfflineJudge()  # ships a small fixture table; HTTP mode queries an endpoint

records = []
print(f"{'image':>6} {'gt':>14} {'pred':>20} {'iou_fg':>7} {'iou_bg':>7}  category")
for image_id, imap, gt, pred in cases:
    record = classify(image_id, imap, fg, gt, pred, judge)
    records.append(record)
    print(
        f"{record.image_id:>6} {record.gt:>14} {record.pred:>20} "
        f"{record.iou_fg:>7.2f} {record.iou_bg:>7.2f}  {record.category}"
    )

report = aggregate_taxonomy(records)
print("\nfractions over all records: ", {k: round(v, 3) for k, v in report["fractions_all"].items()})
print("fractions over errors only:", {k: round(v, 3) for k, v in report["fractions_errors"].items()})
(OUT / "taxonomy.json").write_text(json.dumps(report, indent=2))
print(f"\nwrote {OUT/'taxonomy.json'}")
