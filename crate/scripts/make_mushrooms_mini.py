"""Writes a small synthetic categorical dataset shaped like the mushrooms data."""
import csv
import random
import sys

FEATURES = {
    "cap_shape": "bcxfks",
    "cap_color": "nbcgrpuewy",
    "odor": "alcyfmnps",
    "gill_size": "bn",
    "stalk_root": "bcuezr",
    "ring_type": "cefln",
    "habitat": "glmpuwd",
}
POISON_ODORS = set("cyfmps")

rng = random.Random(20240611)
out = sys.argv[1] if len(sys.argv) > 1 else "crates/core/fixtures/mushrooms_mini.csv"
with open(out, "w", newline="") as fh:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["label", *FEATURES])
    for _ in range(200):
        row = {k: rng.choice(v) for k, v in FEATURES.items()}
        score = (2.0 if row["odor"] in POISON_ODORS else -1.5) + (0.8 if row["gill_size"] == "n" else -0.4)
        score += rng.gauss(0.0, 1.0)
        w.writerow([1 if score > 0 else -1, *row.values()])
