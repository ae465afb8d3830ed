"""Command-line surface: generate / train / render / eval / ablate / diagnose.

Exit codes: 0 on success, 1 on any runtime failure (missing files, bad
config values, training aborts), 2 on malformed arguments.

Configuration files are TOML. Every key is optional and falls back to the
defaults shown; unknown keys are rejected so typos cannot silently revert
a setting to its default.

    [generate]                    # consumed by `generate`
    scenes = 1                    # scene_000.. written under --out
    image_size = 64
    cameras = 8                   # rig views per scene
    seed = 0                      # scene i uses seed + i

    [model]                       # consumed by `train` and `ablate`
    relation = "group_cosine"     # group_cosine|cosine|variance|concat|learned
    resolutions = ["1/8", "1/4"]
    groups = [2, 8]               # similarity groups at 1/8 and 1/4
    num_views = 3

    [model.encoder]
    num_blocks = 6
    window_split = 2
    channels = 128
    ffn_expansion = 4
    num_heads = 1
    enable_self_attn = true
    enable_cross_attn = true

    [model.decoder]
    mlp_layers = 6
    width = 128
    pe_frequencies = 6
    ray_attention_heads = 4
    enable_ray_transformer = true
    modulation = "film"           # film | input_concat

    [train]                       # consumed by `train` and `ablate`
    steps = 1000
    rays_per_batch = 512
    samples_per_ray = 32
    lr_encoder = 5e-5
    lr_decoder = 5e-4
    clip_norm_encoder = 1.0
    weight_decay = 1e-4
    betas = [0.9, 0.999]
    eps = 1e-8
    loss_reduction = "sum"        # sum | mean
    view_selection = "nearest"    # nearest | random
    seed = 0
    log_every = 10
    val_every = 0
    checkpoint_every = 0

A --scene-dir argument may point at a single scene (a directory holding
cameras.json) or at a directory whose subdirectories are scenes; it is
repeatable. `eval` is read-only with respect to checkpoints and scenes.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:                      # Python 3.10
    import tomli as tomllib

from . import autodiff as ad
from .cameras import generate_rays, sample_depths
from .matching import CosineRelation, GroupCosineRelation, geometry_prior
from .metrics import EvalReport, ViewMetrics, depth_metrics, psnr, ssim
from .pipeline import (ABLATION_AXES, Model, ModelConfig, ablation_configs,
                       model_config_from_dict, model_config_to_dict)
from .renderer import render_image, save_depth_raster, save_image_png
from .scenes import (generate_scene, load_checkpoint, load_scene, random_spec,
                     save_scene)
from .training import TrainConfig, select_input_views, train

GENERATE_DEFAULTS = {"scenes": 1, "image_size": 64, "cameras": 8, "seed": 0}


class CliError(ValueError):
    pass


# -- config files -------------------------------------------------------------------


def load_toml(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file not found: {p}")
    try:
        with open(p, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise CliError(f"{p}: invalid TOML: {e}") from e


def _check_value_type(where: str, key: str, value, default) -> None:
    # bool is an int subclass; test it first so steps=true is not an int
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, (list, tuple)):
        ok = isinstance(value, (list, tuple))
    else:
        ok = True
    if not ok:
        raise CliError(f"[{where}] {key} expects {type(default).__name__}, "
                       f"got {value!r}")


def merge_config(defaults: dict, overrides: dict, where: str) -> dict:
    """Overlay a TOML table onto defaults, rejecting unknown keys."""
    out = dict(defaults)
    for key, value in overrides.items():
        if key not in defaults:
            raise CliError(f"unknown key '{key}' in [{where}] "
                           f"(known: {', '.join(sorted(defaults))})")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise CliError(f"[{where}] {key} must be a table")
            out[key] = merge_config(defaults[key], value, f"{where}.{key}")
        else:
            _check_value_type(where, key, value, defaults[key])
            out[key] = value
    return out


def _reject_unknown_tables(doc: dict, allowed: set, path) -> None:
    extra = sorted(set(doc) - allowed)
    if extra:
        raise CliError(f"{path}: unknown top-level table(s) {extra}; "
                       f"expected only {sorted(allowed)}")


def model_config_from_doc(doc: dict, views_override: int | None = None) -> ModelConfig:
    merged = merge_config(model_config_to_dict(ModelConfig()),
                          doc.get("model", {}), "model")
    config = model_config_from_dict(merged)
    if views_override is not None:
        config = replace(config, num_views=views_override)
    return config


def train_config_from_doc(doc: dict, seed_override: int | None = None) -> TrainConfig:
    base = TrainConfig()
    defaults = {f.name: getattr(base, f.name) for f in fields(TrainConfig)}
    merged = merge_config(defaults, doc.get("train", {}), "train")
    if seed_override is not None:
        merged["seed"] = seed_override
    merged["betas"] = tuple(merged["betas"])
    return TrainConfig(**merged)


# -- scene directories --------------------------------------------------------------


def discover_scene_dirs(root) -> list:
    """The directory itself if it is a scene, else its scene subdirectories."""
    root = Path(root)
    if not root.is_dir():
        raise CliError(f"scene directory not found: {root}")
    if (root / "cameras.json").is_file():
        return [root]
    subs = sorted(p for p in root.iterdir()
                  if p.is_dir() and (p / "cameras.json").is_file())
    if not subs:
        raise CliError(f"{root} holds no scene: no cameras.json in it "
                       f"or in any subdirectory")
    return subs


def load_scene_list(paths) -> tuple[list, list]:
    dirs = []
    for p in paths:
        dirs.extend(discover_scene_dirs(p))
    return [load_scene(d) for d in dirs], dirs


def load_single_scene(paths):
    scenes, dirs = load_scene_list(paths)
    if len(scenes) != 1:
        raise CliError(f"expected exactly one scene, found {len(scenes)}: "
                       f"{[str(d) for d in dirs]}")
    return scenes[0]


# -- shared helpers -----------------------------------------------------------------


def _check_views_flag(requested: int | None, model) -> None:
    n = model.config.num_views
    if requested is not None and requested != n:
        raise CliError(f"checkpoint was trained with {n} input views; "
                       f"--views {requested} cannot apply to it")


def _encode_inputs(model, scene, indices):
    images = np.stack([scene.views[i].image for i in indices])
    cameras = [scene.views[i].camera for i in indices]
    return model.encode_views(images, cameras)


def evaluate_scene(model, scene, foreground: bool = False,
                   samples: int | None = None, seed: int = 0) -> EvalReport:
    """Render every view from its nearest inputs and score it against GT."""
    rng = np.random.default_rng(seed)
    per_view = []
    for target in range(len(scene.views)):
        inputs = select_input_views(scene, target, model.config.num_views,
                                    "nearest", rng)
        with ad.no_grad():
            encoded = _encode_inputs(model, scene, inputs)
            rendered = render_image(model, encoded, scene.views[target].camera,
                                    samples_per_ray=samples)
        gt = scene.views[target]
        image = np.clip(rendered.image, 0.0, 1.0)
        mask = None
        if foreground:
            if gt.depth is None:
                raise CliError("--foreground needs ground-truth depth rasters, "
                               "but the scene has none")
            mask = gt.depth > 0
        depth_err = depth_acc = None
        if gt.depth is not None and (gt.depth > 0).any():
            depth_err, depth_acc = depth_metrics(rendered.depth, gt.depth)
        per_view.append(ViewMetrics(
            view_index=target,
            psnr=psnr(image, gt.image, mask),
            ssim=ssim(image, gt.image, mask),
            depth_abs_error=depth_err,
            depth_acc=depth_acc))
    return EvalReport(views=per_view,
                      mask="foreground" if foreground else "whole-image")


def _fmt(value, digits: int = 2) -> str:
    if value is None:
        return "-"
    if isinstance(value, str):
        return value
    if math.isinf(value):
        return "inf"
    return f"{value:.{digits}f}"


def format_table(headers, rows) -> str:
    """Plain fixed-width table; first column left-aligned, rest right-aligned."""
    text = [list(headers)] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in text) for i in range(len(headers))]
    lines = []
    for ri, row in enumerate(text):
        cells = [c.ljust(widths[i]) if i == 0 else c.rjust(widths[i])
                 for i, c in enumerate(row)]
        lines.append("  ".join(cells).rstrip())
        if ri == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_"
                   for c in name.replace("/", "x"))


# -- subcommands --------------------------------------------------------------------


def cmd_generate(args) -> int:
    doc = load_toml(args.config) if args.config else {}
    _reject_unknown_tables(doc, {"generate"}, args.config or "<defaults>")
    table = merge_config(GENERATE_DEFAULTS, doc.get("generate", {}), "generate")
    if table["scenes"] < 1:
        raise CliError(f"[generate] scenes must be >= 1, got {table['scenes']}")
    seed = args.seed if args.seed is not None else table["seed"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(table["scenes"]):
        spec = random_spec(seed + i, image_size=table["image_size"],
                           num_cameras=table["cameras"])
        scene_dir = out / f"scene_{i:03d}"
        save_scene(generate_scene(spec), scene_dir)
        print(f"wrote {scene_dir} ({table['cameras']} views at "
              f"{table['image_size']}x{table['image_size']}, seed {seed + i})")
    return 0


def cmd_train(args) -> int:
    doc = load_toml(args.config) if args.config else {}
    _reject_unknown_tables(doc, {"model", "train"}, args.config or "<defaults>")
    model_cfg = model_config_from_doc(doc, views_override=args.views)
    train_cfg = train_config_from_doc(doc, seed_override=args.seed)
    scenes, _ = load_scene_list(args.scene_dir)
    val_scenes = None
    if args.val_scene_dir:
        val_scenes, _ = load_scene_list(args.val_scene_dir)

    model = Model(model_cfg, seed=train_cfg.seed)
    print(f"training {model.store.num_params()} parameters on {len(scenes)} "
          f"scene(s) for {train_cfg.steps} steps")
    result = train(scenes, model, train_cfg, out_dir=args.out,
                   val_scenes=val_scenes)
    if result.log_rows:
        print(f"final loss {result.log_rows[-1]['loss']:.6g}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.log_path}")
    return 0


def cmd_render(args) -> int:
    model = load_checkpoint(args.checkpoint)
    _check_views_flag(args.views, model)
    scene = load_single_scene(args.scene_dir)
    if not 0 <= args.target < len(scene.views):
        raise CliError(f"target view {args.target} out of range; the scene "
                       f"has {len(scene.views)} views")
    inputs = select_input_views(scene, args.target, model.config.num_views,
                                "nearest", np.random.default_rng(args.seed or 0))
    with ad.no_grad():
        encoded = _encode_inputs(model, scene, inputs)
        rendered = render_image(model, encoded, scene.views[args.target].camera,
                                samples_per_ray=args.samples)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    png = out / f"view_{args.target:03d}.png"
    raster = out / f"view_{args.target:03d}.mndf"
    save_image_png(png, rendered.image)
    save_depth_raster(raster, rendered.depth)
    quality = psnr(np.clip(rendered.image, 0.0, 1.0),
                   scene.views[args.target].image)
    print(f"wrote {png} and {raster} (inputs {[int(i) for i in inputs]}, "
          f"PSNR vs ground truth {_fmt(quality)} dB)")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    _check_views_flag(args.views, model)
    scenes, dirs = load_scene_list(args.scene_dir)

    rows = []
    all_views = []
    scene_reports = []
    for scene, d in zip(scenes, dirs):
        report = evaluate_scene(model, scene, foreground=args.foreground,
                                samples=args.samples, seed=args.seed or 0)
        scene_reports.append({"scene": d.name, **report.to_dict()})
        all_views.extend(report.views)
        for v in report.views:
            rows.append([d.name, v.view_index, _fmt(v.psnr), _fmt(v.ssim, 4),
                         _fmt(v.depth_abs_error, 4), _fmt(v.depth_acc, 3)])

    mask_name = "foreground" if args.foreground else "whole-image"
    overall = EvalReport(views=all_views, mask=mask_name).to_dict()
    rows.append(["mean", "-", _fmt(overall["mean"]["psnr"]),
                 _fmt(overall["mean"]["ssim"], 4),
                 _fmt(overall["mean"].get("depth_abs_error"), 4),
                 _fmt(overall["mean"].get("depth_acc"), 3)])
    print(format_table(["scene", "view", "psnr", "ssim", "depth_err", "acc@0.05"],
                       rows))

    document = {
        "format_version": 1,
        "checkpoint": str(args.checkpoint),
        "mask": mask_name,
        "scenes": scene_reports,
        "mean": overall["mean"],
        "num_infinite_psnr": overall["num_infinite_psnr"],
    }
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(document, indent=2))
    print(f"report: {out}")
    return 0


def _describe(config: ModelConfig) -> str:
    return (f"relation={config.relation} "
            f"resolutions={'+'.join(config.resolutions)} "
            f"self={config.encoder.enable_self_attn} "
            f"cross={config.encoder.enable_cross_attn} "
            f"ray={config.decoder.enable_ray_transformer}")


def cmd_ablate(args) -> int:
    doc = load_toml(args.config) if args.config else {}
    _reject_unknown_tables(doc, {"model", "train"}, args.config or "<defaults>")
    base = model_config_from_doc(doc, views_override=args.views)
    variants = ablation_configs(args.axis, base)

    if args.dry_run:
        print(f"{args.axis} axis: {len(variants)} configurations")
        for name, config in variants:
            print(f"  {name}: {_describe(config)}")
        return 0

    if not args.scene_dir:
        raise CliError("--scene-dir is required unless --dry-run is given")
    if not args.out:
        raise CliError("--out is required unless --dry-run is given")
    train_cfg = train_config_from_doc(doc, seed_override=args.seed)
    scenes, _ = load_scene_list(args.scene_dir)
    if args.val_scene_dir:
        val_scenes, _ = load_scene_list(args.val_scene_dir)
    else:
        val_scenes = scenes
        print("note: no --val-scene-dir given; scoring on the training scenes")

    out = Path(args.out)
    results = []
    for name, config in variants:
        run_dir = out / args.axis / _slug(name)
        print(f"[{name}] training for {train_cfg.steps} steps...")
        model = Model(config, seed=train_cfg.seed)
        train(scenes, model, train_cfg, out_dir=run_dir)
        held_out = []
        for scene in val_scenes:
            held_out.extend(evaluate_scene(model, scene, samples=args.samples,
                                           seed=args.seed or 0).views)
        mean = EvalReport(views=held_out).to_dict()["mean"]
        print(f"[{name}] mean PSNR {_fmt(mean['psnr'])} dB")
        results.append({"name": name, "mean_psnr": mean["psnr"],
                        "mean_ssim": mean["ssim"], "run_dir": str(run_dir)})

    def gap(row):
        a, b = row["mean_psnr"], results[0]["mean_psnr"]
        if isinstance(a, str) or isinstance(b, str):
            return "-"
        return f"{a - b:+.2f}"

    print(format_table(
        ["config", "psnr", "ssim", "vs " + results[0]["name"]],
        [[r["name"], _fmt(r["mean_psnr"]), _fmt(r["mean_ssim"], 4), gap(r)]
         for r in results]))
    report = out / f"ablate_{args.axis}.json"
    report.write_text(json.dumps(
        {"format_version": 1, "axis": args.axis, "rows": results}, indent=2))
    print(f"report: {report}")
    return 0


def cmd_diagnose(args) -> int:
    model = load_checkpoint(args.checkpoint)
    _check_views_flag(args.views, model)
    scene = load_single_scene(args.scene_dir)
    target = args.target if args.target is not None else len(scene.views) - 1
    if not 0 <= target < len(scene.views):
        raise CliError(f"target view {target} out of range; the scene "
                       f"has {len(scene.views)} views")
    view = scene.views[target]
    if view.depth is None:
        raise CliError("diagnose picks foreground rays from ground-truth depth, "
                       "but the scene has no depth rasters")
    foreground = np.argwhere(view.depth > 0)
    if len(foreground) == 0:
        raise CliError(f"view {target} has no foreground pixels")
    if args.rays < 1:
        raise CliError(f"--rays must be >= 1, got {args.rays}")

    rng = np.random.default_rng(args.seed or 0)
    count = min(args.rays, len(foreground))
    if count < args.rays:
        print(f"note: only {len(foreground)} foreground pixels; "
              f"tracing {count} rays", file=sys.stderr)
    picked = foreground[rng.choice(len(foreground), size=count, replace=False)]
    ys, xs = picked[:, 0], picked[:, 1]

    camera = view.camera
    origins, dirs = generate_rays(
        camera, np.stack([xs, ys], axis=1).astype(np.float64))
    depth_count = args.samples or model.samples_per_ray
    t, delta = sample_depths(camera.near, camera.far, depth_count, count)
    inputs = select_input_views(scene, target, model.config.num_views,
                                "nearest", rng)
    with ad.no_grad():
        encoded = _encode_inputs(model, scene, inputs)
        _, sigmas = model.query_rays(encoded, origins, dirs, t, delta)
        # cosine-family models trace their own relation; other relations are
        # probed with the plain cosine so the trace stays a consistency signal
        relation = (model.relation if isinstance(model.relation, GroupCosineRelation)
                    else CosineRelation())
        points = (origins[:, None, :] + t[..., None] * dirs[:, None, :])
        prior = geometry_prior(points.reshape(-1, 3), encoded.views,
                               encoded.cameras, relation,
                               model.config.resolutions)
    cosine = prior.data.reshape(count, depth_count, -1).mean(axis=-1)
    density = np.asarray(sigmas.data)

    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["ray", "px", "py", "sample", "t", "cosine", "sigma"])
        for r in range(count):
            for k in range(depth_count):
                writer.writerow([r, int(xs[r]), int(ys[r]), k,
                                 float(t[r, k]), float(cosine[r, k]),
                                 float(density[r, k])])

    correlations = []
    for r in range(count):
        if cosine[r].std() < 1e-12 or density[r].std() < 1e-12:
            continue
        correlations.append(float(np.corrcoef(cosine[r], density[r])[0, 1]))
    print(f"wrote {out} ({count * depth_count} rows: "
          f"{count} rays x {depth_count} samples)")
    if correlations:
        print(f"median per-ray correlation(cosine, density): "
              f"{float(np.median(correlations)):.3f} over "
              f"{len(correlations)} rays")
    else:
        print("median per-ray correlation(cosine, density): undefined "
              "(every ray is constant)")
    return 0


# -- entry points -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="matchfield",
        description="Correspondence-conditioned radiance fields on synthetic "
                    "multi-view scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="override the seed from the config file")
    common.add_argument("--threads", type=int, default=None,
                        help="cap BLAS thread pools (best effort; commands "
                             "are single-process)")

    p = sub.add_parser("generate", parents=[common],
                       help="write synthetic scene directories")
    p.add_argument("--config", help="TOML file with a [generate] table")
    p.add_argument("--out", required=True,
                   help="directory receiving scene_NNN subdirectories")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common],
                       help="optimize a model on scene directories")
    p.add_argument("--config", help="TOML file with [model] and [train] tables")
    p.add_argument("--scene-dir", action="append", required=True,
                   help="scene directory or directory of scenes (repeatable)")
    p.add_argument("--val-scene-dir", action="append",
                   help="held-out scenes for validation renders (repeatable)")
    p.add_argument("--out", required=True,
                   help="directory for the checkpoint and CSV log")
    p.add_argument("--views", type=int, help="override [model] num_views")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", parents=[common],
                       help="synthesize one view from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene-dir", action="append", required=True)
    p.add_argument("--target", type=int, required=True,
                   help="index of the view to synthesize")
    p.add_argument("--out", required=True,
                   help="directory for the PNG and depth raster")
    p.add_argument("--views", type=int,
                   help="must match the checkpointed model")
    p.add_argument("--samples", type=int,
                   help="depth samples per ray (default: model setting)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", parents=[common],
                       help="score a checkpoint on scenes; JSON report + table")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene-dir", action="append", required=True)
    p.add_argument("--out", required=True, help="path for the JSON report")
    p.add_argument("--views", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--foreground", action="store_true",
                   help="mask PSNR/SSIM to pixels with ground-truth depth > 0")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common],
                       help="train and score every configuration on one axis")
    p.add_argument("--axis", required=True, choices=sorted(ABLATION_AXES))
    p.add_argument("--config", help="base TOML config for all variants")
    p.add_argument("--scene-dir", action="append")
    p.add_argument("--val-scene-dir", action="append")
    p.add_argument("--out")
    p.add_argument("--views", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--dry-run", action="store_true",
                   help="list the configurations without training")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("diagnose", parents=[common],
                       help="CSV of per-sample cosine similarity and density "
                            "along foreground rays")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene-dir", action="append", required=True)
    p.add_argument("--out", required=True, help="CSV path for the traces")
    p.add_argument("--target", type=int,
                   help="view whose rays are traced (default: last)")
    p.add_argument("--rays", type=int, default=128,
                   help="number of foreground rays to trace")
    p.add_argument("--views", type=int)
    p.add_argument("--samples", type=int,
                   help="depth samples per ray (default: model setting)")
    p.set_defaults(func=cmd_diagnose)
    return parser


def _apply_threads(threads: int | None) -> None:
    if threads is None:
        return
    if threads < 1:
        raise CliError(f"--threads must be >= 1, got {threads}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)


def cli(argv=None) -> int:
    """Run one subcommand. Returns 0 / 1 / 2, never raises."""
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:             # argparse: 2 on bad args, 0 on --help
        code = e.code
        return code if isinstance(code, int) else (0 if code is None else 2)
    try:
        _apply_threads(args.threads)
        return args.func(args)
    except Exception as e:
        if os.environ.get("MATCHFIELD_DEBUG"):
            raise
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
