"""Full topology x depth x restart sweep on a synthetic sector panel.

    python3 scripts/demo_sweep.py --epochs 50 --out runs/demo
"""

import argparse
import logging

from pollnet import bench, dataset, synthetic
from pollnet.network import Topology
from pollnet.trainer import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--restarts", type=int, default=5)
    ap.add_argument("--topologies", default="TLRN,RN,MLP,GFFN,RBF")
    ap.add_argument("--hidden", default="0,1,2,3,4")
    ap.add_argument("--seed", type=int, default=20100)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="runs/demo_sweep")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    rows = synthetic.ipps_rows(seed=args.seed)
    data = dataset.prepare(rows, seed=args.seed)
    spec = bench.SweepSpec(
        topologies=tuple(Topology(t.strip().upper()) for t in args.topologies.split(",")),
        hidden_range=tuple(int(h) for h in args.hidden.split(",")),
        restarts=args.restarts,
        config=TrainConfig(epochs=args.epochs, seed=args.seed),
        master_seed=args.seed,
        jobs=args.jobs,
    )
    report = bench.run_sweep(spec, data)
    out = bench.write_archive(report, args.out, data.normalizer)
    print(bench.emit_report(report, "text"))
    print(f"archive written to {out}")


if __name__ == "__main__":
    main()
