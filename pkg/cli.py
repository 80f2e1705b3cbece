"""Command-line entry point.

    python cli.py make-toy OUT_DIR
    python cli.py synthesize CLEAR_DIR DEPTH_DIR OUT_DIR [--beta-variants]
    python cli.py train DATASET_DIR CHECKPOINT [--steps N] [--resume CKPT]
    python cli.py eval CHECKPOINT HAZY_DIR GT_DIR REPORT.csv [--baseline]
    python cli.py inspect CHECKPOINT VIDEO_DIR OUT_DIR --what {flows,weights,priors,components}

Exit codes: 0 success, 1 usage or bad configuration, 2 data error, 3 numeric failure.
"""

import argparse
import logging
import os
import sys

import constants as const
import image_io
import presets
from errors import ContractError, DataError, DimensionError, ParameterError, TrainingError
from haze_physics import (
    expected_transmission, fill_invalid_depth, make_toy_clip,
    synthesize_video, synthesize_video_variants,
)
from map_net import build_parameters, run_video
from metrics_eval import evaluate_video, write_report
from training import OptimizerState, TrainingClip, load_checkpoint, save_checkpoint, train

logger = logging.getLogger("dehaze")

CONFIG_FLAGS = {"seed": "seed", "ranges": "ranges", "scales": "scales", "dbins": "d_bins", "memory": "memory"}


class Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with the toolkit's usage exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(const.EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers -------------------------------------------------------------------
def _resolve_config(args):
    file_values = image_io.read_key_values(args.config) if args.config else {}
    overrides = {key: getattr(args, flag) for flag, key in CONFIG_FLAGS.items()}
    return presets.resolve(args.preset, file_values, overrides)


def _stem(path):
    return os.path.splitext(os.path.basename(path))[0]


def _load_frames(folder):
    paths = image_io.list_files(folder, image_io.FRAME_SUFFIXES)
    if not paths:
        raise DataError(f"no PNG frames in {folder}")
    return paths, [image_io.load_frame(p) for p in paths]


def _matching(folder, stems, suffixes, what):
    """Paths in `folder` named like `stems`; a missing one raises naming the frame."""
    available = {_stem(p): p for p in image_io.list_files(folder, suffixes)}
    missing = [s for s in stems if s not in available]
    if missing:
        raise DataError(f"no {what} for frame {missing[0]} in {folder}")
    if len(available) != len(stems):
        raise DataError(f"{len(available)} {what} files in {folder} for {len(stems)} frames")
    return [available[s] for s in stems]


def _require_parent(path, what):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise DataError(f"cannot write {what} {path}: directory {parent} does not exist")


def _write_video(out_dir, stems, video, clear, cfg):
    for sub in ("hazy", "gt", "transmission"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    for stem, hazy, frame, t in zip(stems, video.hazy, clear, video.transmissions):
        image_io.save_frame(os.path.join(out_dir, "hazy", f"{stem}.png"), hazy)
        image_io.save_frame(os.path.join(out_dir, "gt", f"{stem}.png"), frame)
        image_io.save_pfm(os.path.join(out_dir, "transmission", f"{stem}.pfm"), t)
    # manifest goes last so its presence marks a complete dataset
    image_io.write_key_values(os.path.join(out_dir, const.MANIFEST_NAME), {
        "beta": video.params.beta,
        "airlight": video.params.airlight,
        "seed": cfg.rng_seed,
        "frames": len(stems),
    })


# -- commands ------------------------------------------------------------------
def cmd_make_toy(args):
    seed = const.DEFAULT_SEED if args.seed is None else args.seed
    frames, depths = make_toy_clip(args.frames, args.size, args.size, seed=seed)
    for sub in ("clear", "depth"):
        os.makedirs(os.path.join(args.out_dir, sub), exist_ok=True)
    for i, (frame, depth) in enumerate(zip(frames, depths)):
        image_io.save_frame(os.path.join(args.out_dir, "clear", f"frame_{i:04d}.png"), frame)
        image_io.save_pfm(os.path.join(args.out_dir, "depth", f"frame_{i:04d}.pfm"), depth)
    print(f"wrote {len(frames)} toy frames to {args.out_dir}")
    return const.EXIT_OK


def cmd_synthesize(args):
    _, synthesis = _resolve_config(args)
    paths, clear = _load_frames(args.clear_dir)
    stems = [_stem(p) for p in paths]
    depth_paths = _matching(args.depth_dir, stems, image_io.FLOAT_SUFFIXES, "depth map")
    depths = [fill_invalid_depth(image_io.load_float_map(p)) for p in depth_paths]

    if args.beta_variants:
        videos = synthesize_video_variants(clear, depths, synthesis, workers=args.workers)
        for video in videos:
            _write_video(os.path.join(args.out_dir, f"beta_{video.params.beta:g}"), stems, video, clear, synthesis)
    else:
        videos = [synthesize_video(clear, depths, synthesis, workers=args.workers)]
        _write_video(args.out_dir, stems, videos[0], clear, synthesis)
    print(f"synthesized {len(videos)} video(s) of {len(stems)} frames into {args.out_dir}")
    return const.EXIT_OK


def _load_dataset(folder):
    paths, hazy = _load_frames(os.path.join(folder, "hazy"))
    stems = [_stem(p) for p in paths]
    gt = [image_io.load_frame(p)
          for p in _matching(os.path.join(folder, "gt"), stems, image_io.FRAME_SUFFIXES, "ground truth")]
    t_dir = os.path.join(folder, "transmission")
    transmissions = []
    if os.path.isdir(t_dir):
        transmissions = [image_io.load_float_map(p)
                         for p in _matching(t_dir, stems, image_io.FLOAT_SUFFIXES, "transmission map")]
    return TrainingClip(hazy, gt, transmissions)


def cmd_train(args):
    base = os.path.splitext(args.checkpoint)[0]
    log_path = args.log or f"{base}_log.csv"
    _require_parent(args.checkpoint, "checkpoint")
    _require_parent(log_path, "training log")
    clip = _load_dataset(args.dataset_dir)
    if args.resume:
        cfg, params, opt_state = load_checkpoint(args.resume)
        logger.info("resuming from %s at step %d", args.resume, opt_state.step)
    else:
        cfg, _ = _resolve_config(args)
        params = opt_state = None
    h, w = clip.hazy[0].shape[:2]
    if h % cfg.divisor or w % cfg.divisor:
        raise DimensionError(f"frames are {h}x{w}; both sides must be divisible by {cfg.divisor}")
    if params is None:
        params = build_parameters(cfg)
        opt_state = OptimizerState.initial(params)

    if args.steps is not None and args.steps < 0:
        raise ParameterError(f"--steps must be >= 0, got {args.steps}")
    steps = args.steps if args.steps is not None else max(cfg.total_steps - opt_state.step, 0)
    try:
        reports, opt_state = train(clip, params, opt_state, steps, log_path, fresh_log=not args.resume)
    except TrainingError as e:
        image_io.write_key_values(f"{base}_failure.txt", {"component": e.component, "message": str(e)})
        raise
    save_checkpoint(args.checkpoint, params, opt_state)
    if reports:
        print(f"trained {len(reports)} steps: total loss {reports[0].total:.6f} -> {reports[-1].total:.6f}")
    else:
        print(f"wrote initial checkpoint {args.checkpoint}")
    return const.EXIT_OK


def cmd_eval(args):
    cfg, params, _ = load_checkpoint(args.checkpoint)
    paths, hazy = _load_frames(args.hazy_dir)
    stems = [_stem(p) for p in paths]
    _require_parent(args.report, "report")
    gt = [image_io.load_frame(p)
          for p in _matching(args.gt_dir, stems, image_io.FRAME_SUFFIXES, "ground truth")]
    for i, (a, b) in enumerate(zip(hazy, gt)):
        if a.shape != b.shape:
            raise DimensionError(f"frame {stems[i]}: input {a.shape} and ground truth {b.shape} differ")
    if args.baseline:
        pred = hazy
    else:
        pred, _ = run_video(hazy, params, cfg)
        if args.output_dir:
            os.makedirs(args.output_dir, exist_ok=True)
            for stem, frame in zip(stems, pred):
                image_io.save_frame(os.path.join(args.output_dir, f"{stem}.png"), frame)
    report = evaluate_video(pred, gt, workers=args.workers)
    write_report(args.report, report)
    print(f"{len(report)} frames: mean PSNR {report.mean_psnr:.4f} dB, mean SSIM {report.mean_ssim:.6f}")
    return const.EXIT_OK


def _dump(out_dir, name, array):
    image_io.save_array(os.path.join(out_dir, f"{name}.npy"), array)


def _chw_to_hwc(t):
    return t.data.transpose(1, 2, 0)


def cmd_inspect(args):
    cfg, params, _ = load_checkpoint(args.checkpoint)
    _, video = _load_frames(args.video_dir)
    what = const.InspectTarget(args.what)
    _, intermediates = run_video(video, params, cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    written = 0
    for i, per_scale in enumerate(intermediates):
        for s, so in enumerate(per_scale):
            prefix = f"f{i:04d}_s{s}"
            if what is const.InspectTarget.COMPONENTS:
                _dump(args.out_dir, f"{prefix}_t_hat", so.t_hat.data[0])
                _dump(args.out_dir, f"{prefix}_a_hat", so.a_hat.data)
                _dump(args.out_dir, f"{prefix}_j_hat", _chw_to_hwc(so.j_hat))
                _dump(args.out_dir, f"{prefix}_i_hat", _chw_to_hwc(so.i_hat))
                written += 4
            elif what is const.InspectTarget.FLOWS:
                for r, flow in enumerate(so.flows):
                    _dump(args.out_dir, f"{prefix}_r{r + 1}_flow", _chw_to_hwc(flow))
                    written += 1
            elif what is const.InspectTarget.WEIGHTS:
                if so.range_weights is not None:
                    for r in range(so.range_weights.shape[0]):
                        _dump(args.out_dir, f"{prefix}_r{r + 1}_weight", so.range_weights.data[r])
                        written += 1
            elif so.distribution is not None:
                _dump(args.out_dir, f"{prefix}_distribution", so.distribution.data.transpose(1, 2, 0))
                _dump(args.out_dir, f"{prefix}_token", so.token.data)
                _dump(args.out_dir, f"{prefix}_transmission", expected_transmission(so.distribution.data))
                written += 3
    if not written:
        logger.warning("this configuration produces no %s maps", what.value)
    print(f"wrote {written} {what.value} maps for {len(intermediates)} frames to {args.out_dir}")
    return const.EXIT_OK


# -- parser --------------------------------------------------------------------
def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key-value configuration file")
    common.add_argument("--preset", help=f"named configuration (default: {presets.DEFAULT_PRESET})")
    common.add_argument("--seed", type=int, help="seed for synthesis and weight initialisation")
    common.add_argument("--ranges", type=int, help="number of temporal ranges R")
    common.add_argument("--scales", type=int, help="number of decoder scales S")
    common.add_argument("--dbins", type=int, help="transmission bins per prior token")
    common.add_argument("--memory", type=int, help="token memory capacity N")
    common.add_argument("--workers", type=int, default=1, help="worker threads for per-frame work")
    common.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = Parser(prog="dehaze", description="Video dehazing toolkit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("make-toy", parents=[common], help="write a procedural clear clip with depth")
    p.add_argument("out_dir")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--size", type=int, default=32)
    p.set_defaults(handler=cmd_make_toy)

    p = sub.add_parser("synthesize", parents=[common], help="render hazy videos from clear frames and depth")
    p.add_argument("clear_dir")
    p.add_argument("depth_dir")
    p.add_argument("out_dir")
    p.add_argument("--beta-variants", action="store_true", help="one video per scattering coefficient")
    p.set_defaults(handler=cmd_synthesize)

    p = sub.add_parser("train", parents=[common], help="train on a synthesized dataset")
    p.add_argument("dataset_dir")
    p.add_argument("checkpoint")
    p.add_argument("--steps", type=int, help="updates to run (default: rest of the schedule)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log", help="CSV training log (default: next to the checkpoint)")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score dehazed output against ground truth")
    p.add_argument("checkpoint")
    p.add_argument("hazy_dir")
    p.add_argument("gt_dir")
    p.add_argument("report")
    p.add_argument("--output-dir", help="also write the dehazed frames here")
    p.add_argument("--baseline", action="store_true", help="score the input frames as they are")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("inspect", parents=[common], help="dump intermediate maps")
    p.add_argument("checkpoint")
    p.add_argument("video_dir")
    p.add_argument("out_dir")
    p.add_argument("--what", required=True, choices=[t.value for t in const.InspectTarget])
    p.set_defaults(handler=cmd_inspect)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except ParameterError as e:
        logger.error("%s", e)
        return const.EXIT_USAGE
    except (DataError, DimensionError, ContractError) as e:
        logger.error("%s", e)
        return const.EXIT_DATA
    except TrainingError as e:
        logger.error("%s (component: %s)", e, e.component)
        return const.EXIT_NUMERIC
    except OSError as e:
        logger.error("%s", e)
        return const.EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
