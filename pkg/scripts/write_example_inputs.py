"""Write the bundled example inputs: a simulated dataset and a daily table for ingest."""

from __future__ import annotations

import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from smoothgev.synthetic import load_scenario, save_scenario, simulate, write_scenario_outputs
from smoothgev.utils.io import write_table


def daily_table(txx: pd.DataFrame, boxes: int, seed: int) -> pd.DataFrame:
    """Daily maxima whose yearly maximum is the given TXx, with a few missing days."""
    rng = np.random.default_rng(seed)
    rows = []
    for (box_id, year), value in txx.set_index(["box_id", "year"])["txx_celsius"].items():
        if box_id >= boxes or np.isnan(value):
            continue
        dates = pd.date_range(f"{year}-01-01", f"{year}-12-31", freq="D")
        season = np.sin(np.pi * np.arange(dates.size) / dates.size)
        daily = value - 15.0 * (1.0 - season) - rng.uniform(0.5, 3.0, dates.size)
        daily[np.argmax(season)] = value
        keep = rng.random(dates.size) > 0.01
        keep[np.argmax(season)] = True
        rows.append(pd.DataFrame({"box_id": box_id, "date": dates[keep].strftime("%Y-%m-%d"),
                                  "tmax_celsius": daily[keep]}))
    return pd.concat(rows, ignore_index=True)


def main() -> None:
    parser = argparse.ArgumentParser(description="Write the bundled example inputs.")
    parser.add_argument("--scenario", default="configs/synthetic_example.env", help="Scenario file.")
    parser.add_argument("--out", default="data/example", help="Output directory.")
    parser.add_argument("--seed", type=int, default=13, help="Simulation seed.")
    parser.add_argument("--daily-boxes", type=int, default=4, help="Boxes included in daily.csv.")
    args = parser.parse_args()

    scenario = replace(load_scenario(args.scenario), seed=args.seed)
    data, truth = simulate(scenario)
    paths = write_scenario_outputs(data, truth, scenario.covariate(), args.out)
    txx, _ = data.to_frames()
    paths["daily"] = write_table(daily_table(txx, args.daily_boxes, args.seed), Path(args.out) / "daily.csv")
    paths["scenario"] = save_scenario(scenario, Path(args.out) / "scenario.env")
    for name, path in paths.items():
        print(f"{name}: {path}")


if __name__ == "__main__":
    main()
