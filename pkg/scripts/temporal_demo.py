"""Gamma-memory TLRN against a static MLP on a lagged linear series.

The target depends on inputs 2 and 5 steps back, so a network that only
sees the current input cannot do better than chance correlation.
"""

import argparse

from pollnet import bench, synthetic
from pollnet.network import Topology
from pollnet.trainer import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--epochs", type=int, default=1000)
    ap.add_argument("--restarts", type=int, default=5)
    ap.add_argument("--seed", type=int, default=5)
    args = ap.parse_args()

    data = synthetic.lagged_series(n=args.n, seed=args.seed)
    spec = bench.SweepSpec(topologies=(Topology.TLRN, Topology.MLP), hidden_range=(1,),
                           restarts=args.restarts, config=TrainConfig(epochs=args.epochs),
                           nodes_per_hidden=5, memory_depth=10, trajectory_length=10,
                           master_seed=args.seed)
    report = bench.run_sweep(spec, data)
    for (topo, depth), run in report.cells.items():
        print(f"{topo.value:5s} hidden={depth}  test MSE {run.test.mse:.5f}  R {run.test.r_mean:.4f}  "
              f"epochs {run.final_epoch}  {run.wall_time_s:.1f}s")
    g = report.cells[(Topology.TLRN, 1)].state.params["g"]
    print(f"learned gamma: {g}")


if __name__ == "__main__":
    main()
