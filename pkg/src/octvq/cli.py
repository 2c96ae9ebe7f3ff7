"""Command-line front end: train, encode, decode, eval and sweep."""

import argparse
import csv
import sys
import time
from pathlib import Path

from octvq.codec import analyze, decode, encode_analysis
from octvq.config import CodecConfig, load_config
from octvq.errors import (CodecError, ConfigError, ModelMismatchError, TrainingError)
from octvq.gic import load_model, save_model, train_model
from octvq.pointcloud import (CSV_HEADER, evaluate, load_ply, save_ply,
                              voxelize)

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_MISMATCH, EXIT_TRAINING = 0, 2, 3, 4, 5

SWEEP_HEADER = ["lambda", "bpp", "d1_psnr", "d2_psnr", "encode_seconds", "decode_seconds"]


def _config(path):
    return load_config(path) if path else CodecConfig()


def prepare_input(pc, cfg):
    """Inputs deeper than the configured grid are voxelized down to it."""
    return voxelize(pc, cfg.target_bits) if pc.bit_depth > cfg.target_bits else pc


def cmd_train(args):
    cfg = _config(args.config)
    files = sorted(Path(args.input).glob("*.ply")) if Path(args.input).is_dir() else []
    clouds = [prepare_input(load_ply(f), cfg) for f in files]
    model = train_model(clouds, cfg)
    save_model(args.out, model)
    print(f"parameters: {model.parameter_count()}")
    print(f"model hash: {model.model_hash:016x}")


def _encode(pc, model, cfg, lam, threads):
    analysis = analyze(prepare_input(pc, cfg), model, cfg, threads)
    return analysis, encode_analysis(analysis, lam, num_points_in=len(pc))


def cmd_encode(args):
    model = load_model(args.model)
    cfg = load_config(args.config, model.config) if args.config else model.config
    pc = load_ply(args.input)
    _, result = _encode(pc, model, cfg, args.lam, args.threads)
    Path(args.out).write_bytes(result.data)
    print(f"bpp: {result.bpp!r}")
    print("leaves per level: " + " ".join(
        f"L{n}={c}" for n, c in enumerate(result.leaves_per_level)))


def cmd_decode(args):
    model = load_model(args.model)
    rec = decode(Path(args.input).read_bytes(), model)
    save_ply(args.out, rec)
    print(f"points: {len(rec)}")


def cmd_eval(args):
    ref = load_ply(args.ref)
    rec = load_ply(args.rec)
    bits = 8 * Path(args.stream).stat().st_size
    report = evaluate(ref, rec, bits, workers=args.threads)
    name = Path(args.ref).stem
    text = CSV_HEADER + "\n" + report.csv_row(name) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)


def sweep(pc, model, cfg, lambdas, threads=1):
    """One record per distinct λ, sorted by bpp then λ."""
    ref = prepare_input(pc, cfg)
    t0 = time.perf_counter()
    analysis = analyze(ref, model, cfg, threads)
    shared = time.perf_counter() - t0
    rows = []
    for lam in sorted(set(lambdas)):
        t0 = time.perf_counter()
        result = encode_analysis(analysis, lam, num_points_in=len(pc))
        t_enc = shared + time.perf_counter() - t0
        t0 = time.perf_counter()
        rec = decode(result.data, model)
        t_dec = time.perf_counter() - t0
        rep = evaluate(pc, rec, result.bits, workers=threads)
        rows.append([lam, result.bpp, rep.d1_psnr, rep.d2_psnr, t_enc, t_dec])
    rows.sort(key=lambda r: (r[1], -r[0]))
    return rows


def cmd_sweep(args):
    model = load_model(args.model)
    cfg = load_config(args.config, model.config) if args.config else model.config
    lambdas = [float(x) for x in args.lambdas.replace(",", " ").split()]
    if not lambdas:
        raise ConfigError("no lambda values given")
    rows = sweep(load_ply(args.input), model, cfg, lambdas, args.threads)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        w.writerows(rows)
    for r in rows:
        print(f"lambda={r[0]:g} bpp={r[1]:.4f} d1_psnr={r[2]:.2f}")


def build_parser():
    p = argparse.ArgumentParser(prog="octvq", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an image-codec model from a PLY directory")
    t.add_argument("--input", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("encode")
    e.add_argument("--input", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--lambda", dest="lam", type=float, required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--config", help="override encoder-side settings such as the λ ladder")
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode")
    d.add_argument("--input", required=True)
    d.add_argument("--model", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decode)

    v = sub.add_parser("eval")
    v.add_argument("--ref", required=True)
    v.add_argument("--rec", required=True)
    v.add_argument("--stream", required=True)
    v.add_argument("--out")
    v.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep")
    s.add_argument("--input", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--lambdas", required=True, help="comma or space separated")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_sweep)

    for sp in (e, v, s):
        sp.add_argument("--threads", type=int, default=1)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        args.func(args)
    except ModelMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (CodecError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
