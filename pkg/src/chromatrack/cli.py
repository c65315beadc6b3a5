"""Command-line entry point.

Exit status: 0 on success, 1 for invalid input or usage, 2 for file errors
(unreadable, corrupt, or unsupported files).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_run_config
from .errors import ChromaTrackError, CorruptionError, ParseError, ValidationError, VersionError

log = logging.getLogger("chromatrack")

EXIT_OK, EXIT_INPUT, EXIT_IO = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _run_config(args):
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.with_seed(args.seed)
    return cfg


def _load_model(path):
    from .trainer import read_checkpoint
    return read_checkpoint(path)


def cmd_synth(args, cfg):
    from .io import write_dataset
    from .synth import SyntheticDataset

    d = cfg.data
    ds = SyntheticDataset(args.n or d.n_clips, args.preset or d.preset, d.seed, d.size, args.frames or d.num_frames)
    write_dataset(args.out, ds)
    print(f"wrote {len(ds)} clips to {args.out}")


def _dataset(args, cfg):
    from .io import DirectoryDataset
    from .synth import SyntheticDataset

    if args.data:
        return DirectoryDataset(args.data)
    d = cfg.data
    return SyntheticDataset(d.n_clips, d.preset, d.seed, d.size, d.num_frames)


def cmd_fit_palette(args, cfg):
    from .io import save_palette
    from .trainer import palette_from_dataset

    t = cfg.train
    pal = palette_from_dataset(_dataset(args, cfg), args.samples or t.palette_samples, args.k or t.palette_k, t.seed)
    save_palette(args.out, pal)
    print(f"palette with {pal.K} colors written to {args.out} (objective {pal.fit_metadata['objective']:.1f})")


def cmd_train(args, cfg):
    from .io import load_palette, save_palette
    from .trainer import palette_from_dataset, train

    if args.iters is not None:
        cfg.train.total_iters = args.iters
        cfg.train.lr_drop_iter = min(cfg.train.lr_drop_iter, max(args.iters - 1, 0))
        cfg.train.validate()
    ds = _dataset(args, cfg)
    out = Path(args.out)
    if args.palette:
        pal = load_palette(args.palette)
    else:
        t = cfg.train
        pal = palette_from_dataset(ds, t.palette_samples, t.palette_k, t.seed)
        save_palette(out / "palette.ctck", pal)

    def progress(it, loss):
        if it % 100 == 0:
            log.info("iter %d loss %.4f", it, loss)

    ckpt = train(ds, pal, cfg.network, cfg.train, out, resume=not args.no_resume, progress=progress)
    print(f"trained {ckpt.iteration} iterations in {ckpt.elapsed:.1f}s; checkpoint {ckpt.path}")


def cmd_colorize(args, cfg):
    from .io import read_clip, write_ppm
    from .tracker import colorize

    ck = _load_model(args.checkpoint)
    clip = read_clip(args.clip)
    res = colorize(ck.params, ck.net_config, clip.frames, ck.palette, cfg.tracker)
    for t, frame in enumerate(res.outputs):
        write_ppm(Path(args.out) / "color" / f"{t:03d}.ppm", frame)
    print(f"colorized {len(res.outputs)} frames into {args.out}")


def cmd_track(args, cfg):
    from .io import read_clip, write_keypoints, write_pgm
    from .tracker import track_keypoints, track_segments

    ck = _load_model(args.checkpoint)
    clip = read_clip(args.clip)
    out = Path(args.out)
    if args.mode == "seg":
        res = track_segments(ck.params, ck.net_config, clip.frames, clip.masks[0].astype(np.int64), cfg.tracker)
        for t, m in enumerate(res.outputs):
            write_pgm(out / "masks" / f"{t:03d}.pgm", m.astype(np.uint8))
    else:
        if clip.keypoints.shape[1] == 0:
            raise ValidationError(f"{args.clip} has no keypoints to track")
        res = track_keypoints(ck.params, ck.net_config, clip.frames, clip.keypoints[0], cfg.tracker)
        write_keypoints(out / "keypoints.json", np.stack(res.outputs))
    print(f"tracked {len(res.outputs)} frames into {out}")


def cmd_eval(args, cfg):
    from .evaluation import evaluate_dataset
    from .io import DirectoryDataset, atomic_write_text
    from .metrics import EvalReport, mean_over_videos, score_video

    ds = DirectoryDataset(args.data)
    names = [p.name for p in ds.clip_dirs]
    clips = list(ds)
    if args.identity:
        scores = [score_video([c.masks[0]] * c.num_frames, c.masks) for c in clips]
        mj, mf = mean_over_videos(scores)
        report = EvalReport(mj, mf, [{"video": n, "j": s.j, "f": s.f} for n, s in zip(names, scores)],
                            identity_mean_j=mj, identity_mean_f=mf)
    else:
        if not args.checkpoint:
            raise ValidationError("eval needs --checkpoint or --identity")
        ck = _load_model(args.checkpoint)
        report, _ = evaluate_dataset(ck.params, ck.net_config, ck.palette, clips, cfg.tracker, names)
    atomic_write_text(args.out, report.to_json())
    if args.csv:
        atomic_write_text(args.csv, report.j_csv())
    print(f"mean J {report.mean_j:.4f}  mean F {report.mean_f:.4f}")


def cmd_viz_embed(args, cfg):
    from .io import read_clip, write_ppm
    from .metrics import pca_embed_viz
    from .tracker import embed_video

    ck = _load_model(args.checkpoint)
    clip = read_clip(args.clip)
    gray = np.stack([_gray(f) for f in clip.frames])
    emb = embed_video(ck.params, ck.net_config, gray, cfg.tracker)
    rgb = pca_embed_viz(np.stack(emb.targets))
    f = ck.net_config.grid_factor
    for t, img in enumerate(rgb):
        write_ppm(Path(args.out) / f"{t:03d}.ppm", img.repeat(f, axis=0).repeat(f, axis=1))
    print(f"wrote {len(rgb)} embedding views to {args.out}")


def _gray(frame):
    from .chroma import gray_from_rgb
    return gray_from_rgb(frame)


def build_parser():
    p = _Parser(prog="chromatrack", description="Self-supervised video tracking by colorization.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="run config JSON (network/train/tracker/data sections)")
    p.add_argument("--seed", type=int, help="global seed applied to network, training and data")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="render a synthetic labeled dataset")
    s.add_argument("--preset", choices=["plain", "hard", "static"])
    s.add_argument("--n", type=int, help="number of clips")
    s.add_argument("--frames", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("fit-palette", help="fit the quantized color palette")
    s.add_argument("--data", help="dataset directory (defaults to the configured synthetic data)")
    s.add_argument("--k", type=int)
    s.add_argument("--samples", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_palette)

    s = sub.add_parser("train", help="train the embedding network")
    s.add_argument("--data")
    s.add_argument("--palette")
    s.add_argument("--iters", type=int)
    s.add_argument("--no-resume", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("colorize", help="propagate frame-0 colors through a clip")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--clip", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_colorize)

    s = sub.add_parser("track", help="propagate frame-0 masks or keypoints")
    s.add_argument("--mode", choices=["seg", "kp"], required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--clip", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("eval", help="score tracking on a labeled dataset directory")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--identity", action="store_true", help="score the copy-frame-0 baseline")
    s.add_argument("--out", required=True)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("viz-embed", help="PCA view of the embeddings of a clip")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--clip", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_viz_embed)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _run_config(args)
        args.func(args, cfg)
    except (OSError, CorruptionError, VersionError, ParseError) as exc:
        print(f"chromatrack: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ChromaTrackError, ValueError) as exc:
        print(f"chromatrack: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
