"""Per-pollutant trend accuracy of the published holdout table."""

import csv
from importlib import resources

from pollnet import metrics


def main():
    with resources.files("pollnet").joinpath("fixtures/holdout_pairs.csv").open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    desired = [float(r["desired"]) for r in rows]
    actual = [float(r["actual"]) for r in rows]
    per, mean = metrics.trend_accuracy(desired, actual)
    print(f"{'pollutant':10s} {'desired':>10s} {'actual':>10s} {'trend %':>8s}")
    for r, d, a, t in zip(rows, desired, actual, per):
        print(f"{r['pollutant']:10s} {d:10.3f} {a:10.3f} {t:8.2f}")
    print(f"{'mean':10s} {'':>10s} {'':>10s} {mean:8.2f}")
    print(f"mae_abs {metrics.mae_abs(desired, actual):.3f}  R {metrics.pearson_r(desired, actual):.4f}")


if __name__ == "__main__":
    main()
