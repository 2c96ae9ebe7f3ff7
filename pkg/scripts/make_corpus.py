"""Write the bundled synthetic training corpus, plus a test sphere, as PLY files.

    python scripts/make_corpus.py data/
"""

import argparse
from pathlib import Path

from octvq.pointcloud import save_ply
from octvq.synthetic import sphere_shell, training_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", type=Path)
    ap.add_argument("--bits", type=int, default=9)
    args = ap.parse_args()
    train = args.out / "train"
    train.mkdir(parents=True, exist_ok=True)
    for i, pc in enumerate(training_corpus(args.bits)):
        save_ply(train / f"shape{i:02d}.ply", pc)
        print(f"{train / f'shape{i:02d}.ply'}: {len(pc)} points")
    test = sphere_shell(0.18 * (1 << args.bits), bits=args.bits)
    save_ply(args.out / "sphere.ply", test)
    print(f"{args.out / 'sphere.ply'}: {len(test)} points")


if __name__ == "__main__":
    main()
