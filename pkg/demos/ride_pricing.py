"""Adaptive versus fixed-markup pricing over a synthetic two-peak day.

Prints hourly totals for both policies on a four-region service, then runs
the same controller on the 18-region chain topology shipped next to this
script.
"""

import json
import os

import numpy as np

from ddfeedback.rideshare import RegionGraph, RideScenario, run_policy_comparison

HERE = os.path.dirname(os.path.abspath(__file__))


def hourly(series, slots_per_hour=12):
    K = len(series) // slots_per_hour * slots_per_hour
    return series[:K].reshape(-1, slots_per_hour).sum(axis=1)


def report(title, res):
    print(title)
    print(" hour   profit(adaptive)  profit(fixed)  rides(adaptive)  rides(fixed)")
    pa, pf = hourly(res["adaptive"].profit), hourly(res["fixed"].profit)
    ra, rf = hourly(res["adaptive"].accepted), hourly(res["fixed"].accepted)
    for h in range(len(pa)):
        print(f" {6 + h:4d}   {pa[h]:16.3f}  {pf[h]:13.3f}  {ra[h]:15.3f}  {rf[h]:12.3f}")
    print(f" total  {pa.sum():16.3f}  {pf.sum():13.3f}  {ra.sum():15.3f}  {rf.sum():12.3f}")


def main(seeds=range(20)):
    sc = RideScenario(RegionGraph.complete(4))
    report("four regions, complete rebalancing graph", run_policy_comparison(sc, seeds))

    with open(os.path.join(HERE, "regions18.json")) as fh:
        chain = RegionGraph.from_dict(json.load(fh))
    res = run_policy_comparison(RideScenario(chain), list(seeds)[:5])
    print()
    print("eighteen regions on a chain: total profit "
          f"{res['adaptive'].profit.sum():.3f} adaptive vs {res['fixed'].profit.sum():.3f} fixed; "
          f"mean utilization {np.mean(res['adaptive'].utilization):.3f} vs "
          f"{np.mean(res['fixed'].utilization):.3f}")


if __name__ == "__main__":
    main()
