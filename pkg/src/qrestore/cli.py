"""``qrestore`` command line: decompose, restore, train, eval, gradcheck, degrade.

Exit codes: 0 success, 2 I/O problem, 3 checkpoint problem, 64 usage error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import UnidentifiedImageError

from . import checkpoint as ck
from . import plotting, verify
from .config import Config, ConfigError, load_config, replace
from .decomp import decompose
from .degrade import KINDS, DegradeSpec, degrade
from .imageio import read_image, write_image
from .metrics import psnr, qssim, ssim
from .pipeline import build_model, restore_image, restore_tiled, train
from .qalg import encode_image

EXIT_OK, EXIT_IO, EXIT_CHECKPOINT, EXIT_USAGE = 0, 2, 3, 64

log = logging.getLogger("qrestore")


class UsageError(Exception):
    pass


class CheckpointProblem(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args) -> Config:
    cfg = load_config(args.config)
    return cfg


def _open(path) -> np.ndarray:
    try:
        return read_image(path)
    except (FileNotFoundError, IsADirectoryError, UnidentifiedImageError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


def _pairs(directory: Path):
    """``(name, degraded, clean)`` path triples plus the number of unpaired files."""
    if not directory.is_dir():
        raise OSError(f"not a directory: {directory}")
    deg = {p.name[: -len(".degraded.png")]: p for p in directory.glob("*.degraded.png")}
    clean = {p.name[: -len(".clean.png")]: p for p in directory.glob("*.clean.png")}
    names = sorted(set(deg) & set(clean))
    unpaired = len(set(deg) ^ set(clean))
    return [(n, deg[n], clean[n]) for n in names], unpaired


def _load_model(path, cfg: Config | None):
    path = Path(path)
    if not path.is_file():
        raise CheckpointProblem(f"checkpoint not found: {path}")
    try:
        return ck.load_checkpoint(path, cfg.model if cfg is not None else None)
    except ck.CheckpointError as exc:
        raise CheckpointProblem(str(exc)) from exc


# ---------------------------------------------------------------- commands


def cmd_decompose(args) -> int:
    cfg = _config(args)
    params = cfg.model.decomp
    changes = {k: v for k, v in (("gamma_t", args.gamma_t), ("gamma_s", args.gamma_s)) if v is not None}
    params = replace(params, **changes)
    img = _open(args.input)
    res = decompose(encode_image(img), params)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_image(out / "S.png", res.S.rgb)
    write_image(out / "T.png", res.T.rgb / params.t_max)
    write_image(out / "G.png", np.clip(res.G, 0.0, 1.0))
    if not args.no_figure:
        plotting.decomposition_panel(img, res.S.rgb, res.T.rgb, res.G, out / "decomposition.png", params.t_max)
    print(f"wrote S.png, T.png, G.png to {out}")
    return EXIT_OK


def cmd_restore(args) -> int:
    cfg = load_config(args.config) if args.config else None
    model = _load_model(args.checkpoint, cfg)
    img = _open(args.input)
    if args.tile is not None:
        out, n = restore_tiled(img, model, tile=args.tile, overlap=args.overlap)
        log.info("restored %d tiles", n)
    else:
        out = restore_image(img, model)
    write_image(args.output, out)
    if args.figure:
        plotting.restore_panel(img, out, args.figure)
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    tcfg = cfg.train
    overrides = {"seed": args.seed}
    if args.steps is not None:
        overrides["epochs"] = args.steps
    tcfg = replace(tcfg, **overrides)
    pairs, unpaired = _pairs(Path(args.data_dir))
    if not pairs:
        raise OSError(f"no <name>.degraded.png / <name>.clean.png pairs in {args.data_dir}")
    if unpaired:
        log.warning("skipped %d unpaired file(s)", unpaired)
    data = [(_open(d), _open(c)) for _, d, c in pairs]
    model = build_model(cfg.model, seed=args.seed)
    every = max(1, tcfg.epochs // 20)
    progress = (lambda s, lr, l: print(f"step {s:5d}  lr {lr:.3e}  loss {l:.5f}", flush=True) if s % every == 0 else None)
    result = train(data, tcfg, model, progress=None if args.quiet else progress)
    ckpt = Path(args.out_checkpoint)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    ck.save_checkpoint(model, ckpt)
    loss_csv = Path(args.loss_csv) if args.loss_csv else ckpt.with_suffix(".loss.csv")
    with open(loss_csv, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "lr", "loss"])
        for step, lr, loss in result.history:
            w.writerow([step, repr(lr), repr(loss)])
    if not args.no_figure:
        plotting.loss_curve(result.history, loss_csv.with_suffix(".png"))
    print(f"wrote {ckpt} and {loss_csv}; final loss {result.final_loss:.5f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    pairs, unpaired = _pairs(Path(args.pairs_dir))
    if not pairs:
        raise OSError(f"no <name>.degraded.png / <name>.clean.png pairs in {args.pairs_dir}")
    if unpaired:
        print(f"warning: skipped {unpaired} unpaired file(s)", file=sys.stderr)
    model = _load_model(args.checkpoint, None) if args.checkpoint else None
    rows = []
    for name, dpath, cpath in pairs:
        deg, clean = _open(dpath), _open(cpath)
        if deg.shape != clean.shape:
            raise OSError(f"{name}: degraded and clean images differ in size")
        rec = deg
        if model is not None:
            rec = restore_tiled(deg, model, args.tile, args.overlap)[0] if args.tile else restore_image(deg, model)
        rows.append({"name": name, "psnr_db": psnr(clean, rec), "ssim": ssim(clean, rec), "qssim": qssim(clean, rec)})
    report = Path(args.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    cols = ["name", "psnr_db", "ssim", "qssim"]
    with open(report, "w", newline="") as fh:
        w = csv.DictWriter(fh, cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (r[k] if k == "name" else f"{r[k]:.6f}") for k in cols})
    mean_path = report.with_name(report.stem + ".mean.csv")
    with open(mean_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pairs", "psnr_db", "ssim", "qssim"])
        w.writerow([len(rows)] + [f"{np.mean([r[k] for r in rows]):.6f}" for k in cols[1:]])
    if not args.no_figure:
        plotting.eval_bars(rows, report.with_suffix(".png"))
    print(f"wrote {report} ({len(rows)} pairs) and {mean_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    modules = verify.MODULES if args.module == "all" else (args.module,)
    results = []
    for m in modules:
        results += verify.run_suite(m, seed=args.seed)
    print(verify.format_table(results))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else 1


def cmd_degrade(args) -> int:
    fields = {"kind": args.kind, "seed": args.seed}
    for key, val in (("transmission", args.t), ("airlight", args.A), ("lowlight_exponent", args.exponent),
                     ("rain_count", args.rain_count), ("snow_count", args.snow_count)):
        if val is not None:
            fields[key] = val
    try:
        spec = DegradeSpec(**fields)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    write_image(args.output, degrade(_open(args.input), spec))
    print(f"wrote {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qrestore", description="Quaternion multi-degradation image restoration.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON config file; flags override its values")
        sp.add_argument("--seed", type=int, default=0)

    d = sub.add_parser("decompose", help="write the structure, texture and guidance maps")
    common(d)
    d.add_argument("--input", required=True)
    d.add_argument("--out-dir", required=True)
    d.add_argument("--gamma-t", type=float, help="guidance exponent (default 0.5)")
    d.add_argument("--gamma-s", type=float, help="structure exponent (default 1.5)")
    d.add_argument("--no-figure", action="store_true")
    d.set_defaults(fn=cmd_decompose)

    r = sub.add_parser("restore", help="restore one image with a trained checkpoint")
    common(r)
    r.add_argument("--input", required=True)
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--output", required=True)
    r.add_argument("--tile", type=int)
    r.add_argument("--overlap", type=int, default=16)
    r.add_argument("--figure", help="also write a side-by-side figure here")
    r.set_defaults(fn=cmd_restore)

    t = sub.add_parser("train", help="train on <name>.degraded.png / <name>.clean.png pairs")
    common(t)
    t.add_argument("--data-dir", required=True)
    t.add_argument("--out-checkpoint", required=True)
    t.add_argument("--loss-csv", help="default: <checkpoint>.loss.csv")
    t.add_argument("--steps", type=int, help="override train.epochs")
    t.add_argument("--quiet", action="store_true")
    t.add_argument("--no-figure", action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="PSNR / SSIM / QSSIM report over image pairs")
    common(e)
    e.add_argument("--pairs-dir", required=True)
    e.add_argument("--checkpoint", help="restore the degraded images first; without it they are scored as-is")
    e.add_argument("--report", required=True)
    e.add_argument("--tile", type=int)
    e.add_argument("--overlap", type=int, default=16)
    e.add_argument("--no-figure", action="store_true")
    e.set_defaults(fn=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    g.add_argument("--module", required=True, choices=verify.MODULES + ("all",))
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("degrade", help="synthesize a weather-degraded image")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--kind", required=True, choices=KINDS)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--t", type=float, help="haze transmission")
    s.add_argument("--A", type=float, help="haze airlight")
    s.add_argument("--exponent", type=float, help="low-light exponent")
    s.add_argument("--rain-count", type=int)
    s.add_argument("--snow-count", type=int)
    s.set_defaults(fn=cmd_degrade)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except CheckpointProblem as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (UsageError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
