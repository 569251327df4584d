"""``opacity-field`` command line: generate, carve, train, render, eval, calibrate, matte-prep."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image
from threadpoolctl import threadpool_limits

from .autodiff import CheckpointError, load_checkpoint
from .camera import CameraView, TurntableRig, default_rig, propagate_extrinsics
from .carving import DepthBounds, ShapeFromSilhouette, VoxelGrid, rasterize_depth_bounds
from .config import ConfigError, RunConfig
from .matte import GREEN, key_out, make_trimap
from .metrics import EvalReport, score_view
from .model import OpacityFieldModel
from .scene import SCENES, generate_dataset, load_dataset, read_rgb_alpha, save_dataset, view_schedule, write_rgb_alpha
from .training import NumericalError, Trainer, sampling_bounds

log = logging.getLogger("opacity_field")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
PROXY_FILE = "proxy.voxg"


class DataError(Exception):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _threads(args) -> int:
    if getattr(args, "threads", None):
        return int(args.threads)
    env = os.environ.get("OFLD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise DataError(f"OFLD_THREADS must be an integer, got {env!r}", "OFLD_THREADS") from None
    return 1


def _need_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise DataError(f"{what} directory not found: {p}", what)
    return p


def _load_views(data_dir):
    try:
        return load_dataset(_need_dir(data_dir, "data"))
    except FileNotFoundError as exc:
        raise DataError(str(exc), "data") from None
    except (KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed dataset manifest in {data_dir}: {exc}", "data") from None


def _run_config(args) -> RunConfig:
    return RunConfig.load(getattr(args, "config", None), getattr(args, "set", None) or [])


def _proxy_bounds(config: RunConfig, proxy_dir, cameras) -> list[DepthBounds]:
    if not config.use_ers:
        return sampling_bounds(config, None, cameras)
    if proxy_dir is None:
        raise DataError("a carved proxy (--proxy) is required when use_ers is on", "proxy")
    path = Path(proxy_dir) / PROXY_FILE if Path(proxy_dir).is_dir() else Path(proxy_dir)
    if not path.is_file():
        raise DataError(f"proxy grid not found: {path}", "proxy")
    grid = VoxelGrid.load(path)
    margin = config.margin_voxels * grid.voxel_diagonal
    return [rasterize_depth_bounds(grid, c, margin) for c in cameras]


def _save_rgba(out: Path, name: str, F: np.ndarray, alpha: np.ndarray) -> None:
    write_rgb_alpha(out / f"{name}_rgb.png", out / f"{name}_alpha.png", F, alpha, alpha_bits=16)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.scene not in SCENES:
        raise DataError(f"unknown scene {args.scene!r}; choose from {sorted(SCENES)}", "scene")
    rig = TurntableRig.load(args.rig) if args.rig else default_rig(resolution=args.res)
    scene = SCENES[args.scene](seed=args.seed) if args.scene == "fuzzy-sphere" else SCENES[args.scene]()
    steps = view_schedule(rig, args.views, args.step_offset)
    log.info("generate scene=%s views=%d res=%d", args.scene, args.views, args.res)
    views = generate_dataset(scene, rig, steps, args.samples, threads=_threads(args))
    out = Path(args.out)
    save_dataset(out, views, rig, alpha_bits=args.alpha_bits, extra={"scene": args.scene, "seed": args.seed})
    rig.save(out / "rig.json")
    return EXIT_OK


def cmd_carve(args) -> int:
    config = _run_config(args)
    views = _load_views(args.data)
    sfs = ShapeFromSilhouette(config.carve_resolution, config.carve_threshold, config.dilate_radius,
                              config.margin_voxels, config.bounds)
    bounds = sfs.fit_transform([v.alpha for v in views], [v.view for v in views])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sfs.grid_.save(out / PROXY_FILE)
    for k, b in enumerate(bounds):
        b.save_pfm(out / f"view_{k:03d}_near.pfm", out / f"view_{k:03d}_far.pfm")
    config.save(out / "config.json")
    log.info("carve occupied=%d voxels", sfs.grid_.n_occupied)
    return EXIT_OK


def cmd_train(args) -> int:
    config = _run_config(args)
    if args.steps is not None:
        config.steps = args.steps
        config.validate()
    views = _load_views(args.data)
    bounds = _proxy_bounds(config, args.proxy, [v.view for v in views]) if (args.proxy or not config.use_ers) else None
    trainer = Trainer(config, views, bounds)
    out = Path(args.out)
    if args.resume:
        trainer.load(args.resume)
    log.info("train steps=%d patches=%d", config.steps, len(trainer.pool))
    trainer.run(config.steps - trainer.step, out)
    if bounds is None and trainer.proxy is not None:
        trainer.proxy.grid_.save(out / PROXY_FILE)
    return EXIT_OK


def _render_cameras(args) -> list[tuple[str, CameraView]]:
    if args.view_json:
        p = Path(args.view_json)
        if not p.is_file():
            raise DataError(f"camera JSON not found: {p}", "view-json")
        d = json.loads(p.read_text())
        items = d if isinstance(d, list) else [d]
        try:
            return [(f"view_{k:03d}", CameraView.from_dict(c)) for k, c in enumerate(items)]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"invalid camera JSON {p}: {exc}", "view-json") from None
    if args.data:
        return [(f"view_{k:03d}", v.view) for k, v in enumerate(_load_views(args.data))]
    if args.rig is not None and args.step is not None:
        rig = TurntableRig.load(args.rig)
        return [(f"cam{args.camera}_step{args.step:03d}", propagate_extrinsics(rig, args.camera, args.step))]
    raise DataError("render needs --view-json, --data, or --rig with --step", "camera")


def cmd_render(args) -> int:
    ckpt = Path(args.ckpt)
    state = load_checkpoint(ckpt)
    cfg_path = Path(args.config) if args.config else ckpt.parent / "config.json"
    config = RunConfig.load(cfg_path, args.set or [])
    model = OpacityFieldModel(config.model_config())
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise DataError(f"checkpoint does not match config: {exc}", "ckpt") from None
    cams = _render_cameras(args)
    proxy = args.proxy if args.proxy else (ckpt.parent if (ckpt.parent / PROXY_FILE).is_file() else None)
    bounds = _proxy_bounds(config, proxy, [c for _, c in cams])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for (name, cam), b in zip(cams, bounds):
        r = model.render_image(cam, b)
        _save_rgba(out, name, r["F"], r["alpha"])
        entries.append({"id": len(entries), "rgb": f"{name}_rgb.png", "alpha": f"{name}_alpha.png",
                        "view": cam.to_dict()})
    (out / "manifest.json").write_text(json.dumps({"format": "opacity-field-dataset/1", "alpha_bits": 16,
                                                   "views": entries}, indent=2))
    log.info("render wrote %d views to %s", len(entries), out)
    return EXIT_OK


def cmd_eval(args) -> int:
    pred_dir = _need_dir(args.pred, "pred")
    gt = _load_views(args.gt)
    report = EvalReport()
    for k, g in enumerate(gt):
        rgb, a = pred_dir / f"view_{k:03d}_rgb.png", pred_dir / f"view_{k:03d}_alpha.png"
        if not rgb.is_file() or not a.is_file():
            raise DataError(f"missing prediction for view {k} in {pred_dir}", "pred")
        F, alpha = read_rgb_alpha(rgb, a)
        if alpha.shape != g.alpha.shape:
            raise DataError(f"view {k}: prediction {alpha.shape} vs ground truth {g.alpha.shape}", "pred")
        report.add(f"view_{k:03d}", score_view(F, alpha, g.foreground, g.alpha, args.radius))
    text = report.to_csv()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    p = Path(args.rig)
    if not p.is_file():
        raise DataError(f"rig file not found: {p}", "rig")
    try:
        rig = TurntableRig.load(p)
    except (ValueError, json.JSONDecodeError) as exc:
        raise DataError(str(exc), "rig") from None
    if not 0 <= args.camera < len(rig.base_views):
        raise DataError(f"camera {args.camera} not in rig ({len(rig.base_views)} cameras)", "camera")
    steps = range(rig.steps_per_lap) if args.step is None else [args.step]
    try:
        cams = [dict(propagate_extrinsics(rig, args.camera, j).to_dict(), step=j) for j in steps]
    except ValueError as exc:
        raise DataError(str(exc), "step") from None
    text = json.dumps(cams[0] if args.step is not None else cams, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _parse_color(text: str):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        vals = ()
    if len(vals) != 3 or not all(0 <= v <= 1 for v in vals):
        raise DataError(f"--ref must be three comma-separated values in [0, 1], got {text!r}", "ref")
    return vals


def cmd_matte_prep(args) -> int:
    ref = _parse_color(args.ref)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in args.image:
        p = Path(path)
        if not p.is_file():
            raise DataError(f"image not found: {p}", "image")
        img = np.asarray(Image.open(p).convert("RGB"), dtype=np.float64) / 255.0
        mask = key_out(img, ref, args.tau_g, args.tau_w)
        tri = make_trimap(mask, args.erode, args.dilate)
        Image.fromarray(mask.astype(np.uint8) * 255, "L").save(out / f"{p.stem}_mask.png")
        Image.fromarray(tri.labels, "L").save(out / f"{p.stem}_trimap.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, config: bool = False) -> None:
    p.add_argument("--threads", type=int, default=None, help="worker cap (falls back to OFLD_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    if config:
        p.add_argument("--config", default=None, help="run configuration JSON")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opacity-field", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a synthetic ground-truth dataset")
    p.add_argument("--scene", default="fuzzy-sphere")
    p.add_argument("--views", type=int, default=8)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--samples", type=int, default=1024, help="quadrature samples per ray")
    p.add_argument("--step-offset", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rig", default=None, help="rig JSON (default: built-in desk rig)")
    p.add_argument("--alpha-bits", type=int, choices=(8, 16), default=8)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("carve", help="carve the silhouette proxy and write depth bounds")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _common(p, config=True)
    p.set_defaults(func=cmd_carve)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--proxy", default=None, help="carve output directory")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    _common(p, config=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render views from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--view-json", default=None)
    p.add_argument("--data", default=None, help="render every camera of this dataset")
    p.add_argument("--rig", default=None)
    p.add_argument("--camera", type=int, default=0)
    p.add_argument("--step", type=int, default=None)
    p.add_argument("--proxy", default=None)
    p.add_argument("--out", required=True)
    _common(p, config=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.add_argument("--radius", type=int, default=5, help="morphology radius of the U+/U- regions")
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calibrate", help="propagate rig extrinsics to turntable steps")
    p.add_argument("--rig", required=True)
    p.add_argument("--camera", type=int, default=0)
    p.add_argument("--step", type=int, default=None, help="single step (default: the whole lap)")
    p.add_argument("--out", default=None)
    _common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("matte-prep", help="key out green/white and build trimaps")
    p.add_argument("--image", nargs="+", required=True)
    p.add_argument("--ref", default=",".join(str(v) for v in GREEN))
    p.add_argument("--tau-g", type=float, default=0.15)
    p.add_argument("--tau-w", type=float, default=0.92)
    p.add_argument("--erode", type=int, default=3)
    p.add_argument("--dilate", type=int, default=3)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_matte_prep)
    return parser


def _fail(category: str, message: str, key=None) -> None:
    payload = {"error": category, "message": message}
    if key is not None:
        payload["key"] = key
    sys.stderr.write(json.dumps(payload) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s level=%(levelname)s %(name)s %(message)s")
    try:
        with threadpool_limits(_threads(args)):
            return args.func(args)
    except ConfigError as exc:
        _fail("config", str(exc), exc.key)
        return EXIT_DATA
    except DataError as exc:
        _fail("data", str(exc), exc.key)
        return EXIT_DATA
    except CheckpointError as exc:
        _fail("data", str(exc), "ckpt")
        return EXIT_DATA
    except NumericalError as exc:
        _fail("numeric", str(exc), str(exc.dump_path) if exc.dump_path else None)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        _fail("data", str(exc))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
