"""Train the default model (or load one) and print an RD curve for a sphere shell.

    python scripts/rd_sweep.py --model model.gicm --lambdas 0.05 0.2 1 5 25
"""

import argparse
import csv
import sys

from octvq.cli import SWEEP_HEADER, sweep
from octvq.config import CodecConfig
from octvq.gic import load_model, save_model, train_model
from octvq.pointcloud import load_ply
from octvq.synthetic import sphere_shell, training_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", help="model file; trained and saved here if missing")
    ap.add_argument("--input", help="PLY to sweep (default: 512^3 sphere shell, radius 90)")
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.05, 0.2, 1, 5, 25])
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    try:
        model = load_model(args.model) if args.model else None
    except FileNotFoundError:
        model = None
    if model is None:
        model = train_model(training_corpus(), CodecConfig())
        if args.model:
            save_model(args.model, model)
    pc = load_ply(args.input) if args.input else sphere_shell(90)
    rows = sweep(pc, model, model.config, args.lambdas, args.threads)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    w.writerows([[f"{v:.6g}" for v in r] for r in rows])


if __name__ == "__main__":
    main()
