#!/usr/bin/env python3
"""Generate data/demo_snapshot.csv, a synthetic 162-row country snapshot.

The rows are invented ("Country-001" ...). A latent development factor drives
both the demographic columns and the COVID-19 outcome columns, so the demo
pipeline has real structure to find. Not real data.

Usage: python3 scripts/gen_demo_snapshot.py [OUT]
"""

import csv
import math
import random
import sys
from pathlib import Path

ROWS = 162
SEED = 2021
MISSING_RATE = 0.02


def clamp(v, lo, hi):
    return max(lo, min(hi, v))


def row(rng, i):
    d = rng.gauss(0.0, 1.0)  # development
    s = 0.85 * d + 0.5 * rng.gauss(0.0, 1.0)  # severity
    g = lambda sd: rng.gauss(0.0, sd)
    cols = {
        "Lung_Disease": clamp(22 + 8 * d + g(8), 3, 70),
        "Hypertension": clamp(12 + 3 * d + g(4), 1, 35),
        "Population.Density": math.exp(4.3 + g(1.3)),
        "Female": clamp(50 + 0.6 * d + g(1.2), 44, 56),
        "Age_1": clamp(27 - 9 * d + g(2.5), 10, 50),
        "Age_2": clamp(63 + 3 * d + g(3), 48, 76),
        "Age_3": clamp(9.5 + 5.5 * d + g(1.5), 1, 30),
        "Beds": clamp(math.exp(0.8 + 0.6 * d + g(0.4)), 0.1, 14),
        "Air_Pollution": clamp(math.exp(3.2 - 0.5 * d + g(0.5)), 4, 110),
        "Mortality.rate_AP": clamp(math.exp(4.2 - 0.9 * d + g(0.5)), 3, 320),
        "Poverty.Ratio": clamp(math.exp(1.7 - 1.4 * d + g(0.6)), 0.1, 75),
        "Employment.ratio.": clamp(57 + g(8), 30, 85),
        "Smoking.Male": clamp(33 + 3 * d + g(9), 5, 70),
        "Smoking.Female": clamp(7 + 6.5 * s + g(1), 0.1, 45),
        "Diabetes.prevalence": clamp(8 + g(3), 1, 23),
        "Mortality_Diab_CVD": clamp(20 - 3 * d + g(4), 8, 45),
        "Literacy.Rate": clamp(88 + 10 * d + g(5), 25, 100),
        "Phys_rate": clamp(math.exp(0.1 + 1.1 * d + g(0.4)), 0.02, 8.5),
        "Health.Exped": clamp(6.5 + 1.8 * d + g(1.5), 1, 17.5),
        "Forest.Area": clamp(31 + g(18), 0, 92),
        "Handwash": clamp(60 + 25 * d + g(10), 2, 100),
        "Obesity": clamp(18 + 5 * s + g(2), 2, 40),
        "Avg.Temp": clamp(18 - 5 * d + g(4), -5, 29.5),
    }
    outcomes = {
        "DpM": math.exp(5.1 + 1.5 * s + g(0.25)),
        "CpM": math.exp(8.6 + 1.5 * s + g(0.4)),
        "TpM": math.exp(11.2 + 1.3 * s + g(0.6)),
    }
    out = {"Country": f"Country-{i:03d}"}
    for k, v in cols.items():
        out[k] = "" if rng.random() < MISSING_RATE else f"{v:.3f}"
    for k, v in outcomes.items():
        out[k] = f"{v:.1f}"
    return out


def main():
    root = Path(__file__).resolve().parent.parent
    dest = Path(sys.argv[1]) if len(sys.argv) > 1 else root / "data" / "demo_snapshot.csv"
    rng = random.Random(SEED)
    rows = [row(rng, i) for i in range(1, ROWS + 1)]
    dest.parent.mkdir(parents=True, exist_ok=True)
    with dest.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
