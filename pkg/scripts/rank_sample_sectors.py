"""Loads and sector ranking for the bundled sample rows under the demo scale."""

from importlib import resources

from pollnet import ipps


def main():
    root = resources.files("pollnet").joinpath("fixtures")
    table = ipps.read_intensity_table(root / "sample_intensity.csv", root / "sample_scale.txt")
    loads = ipps.estimate_all(table, ipps.read_activity(root / "sample_activity.csv"))
    for pollutant in (ipps.PollutantCode.SO2, ipps.PollutantCode.FP, ipps.PollutantCode.TCLAND):
        ranked = ipps.rank_sectors(loads, pollutant)
        print(f"{pollutant.value}: " + ", ".join(f"{s.value} {v:.1f}" for s, v in ranked))
    for medium, total in ipps.aggregate_by_medium(loads).items():
        print(f"{medium.value:5s} {total:14.3f} ton/yr")


if __name__ == "__main__":
    main()
