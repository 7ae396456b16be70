"""``cw`` command line entry point.

Exit codes: 0 success, 2 bad arguments, 3 I/O failure, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .clustering import ClusteringError
from .colorspace import to_grayscale
from .config import Config, ConfigError, load_config
from .diffusion import NumericalError
from .imagecore import ImageIOError, load_mask, save_image
from .recolor import DegenerateCovarianceError

log = logging.getLogger("colorwise")

EXIT_OK, EXIT_ARGS, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cw", description="Disentangled color/style transfer with a toy DDIM harness."
    )
    p.add_argument("mode", choices=pl.MODES)
    p.add_argument("--content", default="toy:32x32", help="image path or toy:WxH")
    p.add_argument("--color-ref")
    p.add_argument("--style-ref")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int, help="sets both the latent and k-means seeds")
    p.add_argument("--content-mask", help="object mask for the content image")
    p.add_argument("--ref-mask", help="object mask for the color reference")
    p.add_argument("--dump-intermediates", metavar="DIR",
                   help="write per-timestep decoded clean estimates")
    p.add_argument("--report", metavar="DIR", help="write metrics.csv and figures")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    seed = args.seed
    return cfg.replace(k=args.k, seed_latent=seed, seed_kmeans=seed).validate()


def _metrics(job: pl.TransferJob, out: np.ndarray):
    n = job.config.k
    rows, palettes = [], {}
    images = {"output": out}
    out_pal = pl.dominant_palette(out, min(n, _distinct(out)))
    palettes["output"] = out_pal
    if job.color_ref is not None:
        ref = pl._reference(job.color_ref, out.shape[:2])
        images["color ref"] = ref
        ref_pal = pl.dominant_palette(ref, min(len(out_pal), _distinct(ref)))
        palettes["color ref"] = ref_pal
        if len(ref_pal) == len(out_pal):
            rows.append(("palette_distance_color_ref", pl.palette_distance(out_pal, ref_pal)))
        rows.append(("dominant_chroma_distance",
                     pl.chroma_distance(out_pal.colors[0], ref_pal.colors[0])))
    if job.style_ref is not None:
        sref = pl._reference(job.style_ref, out.shape[:2])
        images["style ref"] = to_grayscale(sref)
        rows.append(("edge_change_vs_style_ref", pl.edge_change_fraction(out, sref)))
    if job.mode in ("color-only", "style-only", "color+style"):
        base = pl.run_unconditioned(job)
        images["unconditioned"] = base
        rows.append(("edge_change_vs_unconditioned", pl.edge_change_fraction(out, base)))
    return rows, palettes, images


def _distinct(img) -> int:
    return len(np.unique(np.asarray(img).reshape(-1, np.asarray(img).shape[-1]), axis=0))


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        job = pl.TransferJob(
            mode=args.mode,
            content=args.content,
            color_ref=args.color_ref,
            style_ref=args.style_ref,
            config=cfg,
            content_mask=load_mask(args.content_mask) if args.content_mask else None,
            ref_mask=load_mask(args.ref_mask) if args.ref_mask else None,
        )
    except (ConfigError, pl.JobError) as exc:
        print(f"cw: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (ImageIOError, OSError) as exc:
        print(f"cw: {exc}", file=sys.stderr)
        return EXIT_IO

    frames: dict[str, dict[int, np.ndarray]] = {}

    def record(branch, t, img):
        frames.setdefault(branch, {})[t] = img.copy()

    on_step = record if (args.dump_intermediates or args.report) else None
    try:
        log.info("running %s", args.mode)
        out = pl.run_job(job, on_step=on_step)
        save_image(out, args.out)
        if args.dump_intermediates:
            d = Path(args.dump_intermediates)
            d.mkdir(parents=True, exist_ok=True)
            for branch, per_step in frames.items():
                for t, img in sorted(per_step.items(), reverse=True):
                    save_image(img, d / f"{branch}_z0_t{t:04d}.png")
        if args.report:
            rows, palettes, images = _metrics(job, out)
            from .report import write_report

            write_report(args.report, images, palettes, rows, frames)
            for name, value in rows:
                print(f"{name}\t{value:.6g}")
    except pl.JobError as exc:
        print(f"cw: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (ImageIOError, OSError) as exc:
        print(f"cw: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, ClusteringError, DegenerateCovarianceError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"cw: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"cw: {exc}", file=sys.stderr)
        return EXIT_ARGS
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
