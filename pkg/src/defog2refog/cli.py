"""Command-line entry points: train, defog, synth, eval, make-toy-data.

Every command writes a ``run_manifest.json`` next to its outputs before doing
any work. ``DEFOG2REFOG_CACHE`` sets the directory that relative training
output directories and checkpoint paths are resolved against.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, data, fogmodel, imio, metrics, trainer
from .config import ConfigError, load_config
from .data import ConfigurationError
from .inference import defog_image

log = logging.getLogger("defog2refog")

CACHE_ENV = "DEFOG2REFOG_CACHE"
EVAL_COLUMNS = ("image", "e", "r_bar", "delta", "fog_proxy")


def cache_dir() -> Path | None:
    value = os.environ.get(CACHE_ENV)
    return Path(value) if value else None


def _resolve(path: str | Path) -> Path:
    path = Path(path)
    base = cache_dir()
    if base is not None and not path.is_absolute() and not path.exists():
        return base / path
    return path


def code_version() -> str:
    digest = hashlib.sha256()
    for src in sorted(Path(__file__).parent.glob("*.py")):
        digest.update(src.read_bytes())
    return f"{__version__}+{digest.hexdigest()[:12]}"


def write_manifest(directory: Path, command: str, argv: list[str], config: dict, seed: int | None = None) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": argv,
        "config": config,
        "seed": seed,
        "code_version": code_version(),
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    path = directory / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return path


def _finish(skipped: list, strict: bool) -> int:
    if skipped:
        print(f"skipped {len(skipped)} file(s):", file=sys.stderr)
        for s in skipped:
            print(f"  {s}", file=sys.stderr)
        if strict:
            return 3
    return 0


# -- train ------------------------------------------------------------------


def cmd_train(args, argv) -> int:
    overrides = {
        "iterations": args.iterations,
        "seed": args.seed,
        "out_dir": args.out_dir,
        "image_size": args.image_size,
        "foggy_dir": args.foggy_dir,
        "clear_dir": args.clear_dir,
    }
    cfg = load_config(args.config, **overrides)
    out_dir = _resolve(cfg.out_dir)
    cfg = cfg.with_overrides(out_dir=str(out_dir))
    resume = None
    if args.resume:
        resume = out_dir / "latest.ckpt" if args.resume == "latest" else _resolve(args.resume)
        if not resume.is_file():
            raise ConfigError([f"resume checkpoint does not exist: {resume}"])
    write_manifest(out_dir, "train", argv, cfg.to_dict(), cfg.seed)
    dataset = data.scan_unpaired(cfg.foggy_dir, cfg.clear_dir, cfg.image_size)
    print(f"training on {dataset.sizes[0]} foggy / {dataset.sizes[1]} clear images -> {out_dir}")
    state = trainer.train(cfg, dataset, resume_from=resume, out_dir=out_dir)
    print(f"finished at iteration {state.iteration}; latest checkpoint {out_dir / 'latest.ckpt'}")
    return _finish(dataset.skipped, args.strict)


# -- defog ------------------------------------------------------------------


def cmd_defog(args, argv) -> int:
    ckpt = _resolve(args.checkpoint)
    G, cfg = trainer.load_generator(ckpt)
    out_dir = Path(args.out_dir)
    write_manifest(out_dir, "defog", argv, {"checkpoint": str(ckpt), "in_dir": args.in_dir, "image_size": cfg.image_size})
    inputs = imio.list_images(args.in_dir)
    skipped = []

    def work(path: Path):
        try:
            img = imio.read_image(path)
        except imio.ImageDecodeError:
            return path, False
        imio.write_image(out_dir / f"{path.stem}.png", defog_image(G, img, cfg.image_size))
        return path, True

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        for path, ok in pool.map(work, inputs):
            if not ok:
                skipped.append(path)
    print(f"defogged {len(inputs) - len(skipped)} image(s) into {out_dir}")
    return _finish(skipped, args.strict)


# -- synth ------------------------------------------------------------------


def default_depth_ramp(h: int, w: int, far: float = 1.0) -> np.ndarray:
    """Depth falling linearly from ``far`` at the top row to 0 at the bottom row."""
    return np.repeat(np.linspace(far, 0.0, h)[:, None], w, axis=1)


def _find_depth(depth_dir: Path, stem: str) -> Path | None:
    for suffix in (".dpth", ".png"):
        p = depth_dir / f"{stem}{suffix}"
        if p.is_file():
            return p
    return None


def cmd_synth(args, argv) -> int:
    out_dir = Path(args.out_dir)
    airlight = np.asarray(args.airlight, dtype=np.float64)
    if np.any(airlight < 0) or np.any(airlight > 1):
        raise ConfigError([f"airlight components must lie in [0, 1], got {args.airlight}"])
    write_manifest(
        out_dir,
        "synth",
        argv,
        {"clear_dir": args.clear_dir, "depth_dir": args.depth_dir, "beta": args.beta, "airlight": args.airlight},
    )
    skipped = []
    for path in imio.list_images(args.clear_dir):
        try:
            clear = imio.read_image(path)
        except imio.ImageDecodeError:
            skipped.append(path)
            continue
        h, w = clear.shape[:2]
        if args.depth_dir:
            dpath = _find_depth(Path(args.depth_dir), path.stem)
            if dpath is None:
                skipped.append(f"{path} (no depth map)")
                continue
            depth = imio.read_depth(dpath)
            if depth.shape != (h, w):
                depth = data.resize_bilinear(depth.astype(np.float32), (h, w)).astype(np.float64)
        else:
            depth = default_depth_ramp(h, w)
        t = fogmodel.transmission_from_depth(depth, args.beta).astype(np.float32).astype(np.float64)
        foggy = fogmodel.synthesize_fog(clear, t, airlight)
        imio.write_image(out_dir / f"{path.stem}.png", foggy, args.bit_depth)
        imio.write_dpth(out_dir / f"{path.stem}_T.dpth", t)
        imio.write_airlight(out_dir / f"{path.stem}_A.txt", airlight)
    return _finish(skipped, args.strict)


# -- eval -------------------------------------------------------------------


def eval_row(name: str, before_path: Path, after_path: Path) -> dict:
    before = imio.read_image(before_path)
    after = imio.read_image(after_path)
    if after.shape != before.shape:
        after = np.clip(data.resize_bilinear(after, before.shape[:2]), 0.0, 1.0)
    r = metrics.bave_indicators(before, after)
    return {"image": name, "e": r.e, "r_bar": r.r_bar, "delta": r.delta, "fog_proxy": metrics.fog_density_proxy(after)}


def mean_row(name: str, rows: list[dict]) -> dict:
    return {"image": name, **{k: float(np.mean([r[k] for r in rows])) for k in EVAL_COLUMNS[1:]}}


def _eval_jobs(args) -> tuple[list[tuple[str, Path, Path, str | None]], list]:
    jobs, skipped = [], []
    after_root = Path(args.after_dir)
    if args.mrfid:
        index = data.index_mrfid(args.mrfid)
        skipped += [f"scene {s} (no clear.png)" for s in index.rejected]
        for scene in index.scenes:
            for level, before in scene.fog_paths.items():
                after = after_root / scene.scene_id / f"{level}.png"
                if after.is_file():
                    jobs.append((f"{scene.scene_id}/{level}", before, after, level))
                else:
                    skipped.append(f"{after} (missing)")
    else:
        if not Path(args.before_dir).is_dir():
            raise ConfigurationError(f"before directory does not exist: {args.before_dir}")
        after_by_name = {p.name: p for p in imio.list_images(after_root)}
        for before in imio.list_images(args.before_dir):
            after = after_by_name.get(before.name) or after_by_name.get(f"{before.stem}.png")
            if after is None:
                skipped.append(f"{before} (no restored counterpart)")
            else:
                jobs.append((before.name, before, after, None))
    return jobs, skipped


def cmd_eval(args, argv) -> int:
    if not Path(args.after_dir).is_dir():
        raise ConfigurationError(f"after directory does not exist: {args.after_dir}")
    report = Path(args.report)
    write_manifest(
        report.parent,
        "eval",
        argv,
        {"before_dir": args.before_dir, "mrfid": args.mrfid, "after_dir": args.after_dir, "report": str(report)},
    )
    jobs, skipped = _eval_jobs(args)

    def work(job):
        name, before, after, level = job
        try:
            return eval_row(name, before, after), level
        except imio.ImageDecodeError:
            return None, name

    rows, levels = [], {}
    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        for row, tag in pool.map(work, jobs):
            if row is None:
                skipped.append(tag)
                continue
            rows.append(row)
            if tag is not None:
                levels.setdefault(tag, []).append(row)
    with open(report, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=EVAL_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
        for level in data.MRFID_LEVELS:
            if level in levels:
                writer.writerow(mean_row(f"mean:{level}", levels[level]))
        if rows:
            writer.writerow(mean_row("mean", rows))
    print(f"evaluated {len(rows)} image pair(s) -> {report}")
    return _finish(skipped, args.strict)


# -- make-toy-data ----------------------------------------------------------


def cmd_make_toy_data(args, argv) -> int:
    out = Path(args.out_dir)
    write_manifest(out, "make-toy-data", argv, {"n_scenes": args.n_scenes, "size": args.size}, args.seed)
    ds = data.make_toy_dataset(out, args.n_scenes, args.size, args.seed)
    print(f"clear: {ds.clear_dir}\nfoggy: {ds.foggy_dir}\ntruth: {ds.truth_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="defog2refog", description="Unpaired single-image fog removal.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--strict", action="store_true", help="exit nonzero when any input was skipped")

    p = sub.add_parser("train", help="train from a YAML config")
    p.add_argument("config")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--image-size", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--foggy-dir")
    p.add_argument("--clear-dir")
    p.add_argument("--resume", help="checkpoint path, or 'latest' for <out_dir>/latest.ckpt")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("defog", help="defog every image of a directory")
    p.add_argument("checkpoint")
    p.add_argument("in_dir")
    p.add_argument("out_dir")
    p.add_argument("--workers", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_defog)

    p = sub.add_parser("synth", help="add synthetic fog to clear images")
    p.add_argument("clear_dir")
    p.add_argument("out_dir")
    p.add_argument("--depth-dir", help="per-image depth (<stem>.dpth or <stem>.png); default is a linear ramp")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--airlight", type=float, nargs=3, default=[1.0, 1.0, 1.0], metavar=("R", "G", "B"))
    p.add_argument("--bit-depth", type=int, choices=(8, 16), default=8)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="blind quality report of restored images")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--before-dir")
    src.add_argument("--mrfid", help="root laid out as <scene>/{clear,slight,moderate,high,extreme}.png")
    p.add_argument("--after-dir", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--workers", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("make-toy-data", help="write a synthetic clear/foggy toy dataset")
    p.add_argument("out_dir")
    p.add_argument("--n-scenes", type=int, default=16)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_toy_data)
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args, argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except trainer.CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
