#!/usr/bin/env python3
"""Overfit a single synthetic scene and score a nearby held-out view.

Protocol: render a 32-camera ring of the scene, keep four adjacent-azimuth
cameras (a tight cluster, ~11 degrees apart), hold out one that is flanked
by training cameras on both sides (so the target is nearby, not an
extrapolation), and train a 2-input-view model on the other three. Reports
held-out PSNR, the loss-reduction factor against step 1, and
per-checkpoint depth metrics on the held-out foreground.

The defaults are the smoke preset; --preset desk switches to the full-size
configuration. Results land in --out as JSON plus the usual training
artifacts (train_log.csv, step_*.ckpt, final.ckpt).
"""

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from matchfield import autodiff as ad
from matchfield.decoder import DecoderConfig
from matchfield.encoder import EncoderConfig
from matchfield.metrics import depth_metrics, psnr
from matchfield.pipeline import Model, ModelConfig
from matchfield.renderer import render_image
from matchfield.scenes import (Scene, generate_scene, load_checkpoint,
                               random_spec, save_scene)
from matchfield.training import TrainConfig, select_input_views, train

PRESETS = {
    # smoke: sized for a single CPU core; desk: the full-size run.
    # eval_samples only densifies ray integration at render time; training
    # itself always sees `samples` depth samples per ray. pe_frequencies is
    # deliberately low: with three training views a high-bandwidth positional
    # encoding lets the decoder paint the training light field with a diffuse
    # density (never forming surfaces); a coarse encoding cannot represent
    # sharp image detail, so the full-resolution texture prior plus a real
    # surface becomes the only way to fit the data.
    "smoke": dict(image_size=32, channels=64, blocks=4, heads=1, width=96,
                  mlp_layers=4, pe_frequencies=3, rays=128, samples=32,
                  steps=5000, eval_samples=128),
    "desk": dict(image_size=64, channels=128, blocks=6, heads=1, width=128,
                 mlp_layers=6, pe_frequencies=3, rays=256, samples=32,
                 steps=5000, eval_samples=128),
}


def overfit_split(scene_seed: int, image_size: int):
    """One scene, three training views, one nearby held-out view.

    A 32-camera ring with a narrow elevation band puts neighbors ~11
    degrees apart; the held-out camera is the second of four adjacent
    azimuths, so training views flank it on both sides.
    """
    spec = random_spec(scene_seed, image_size=image_size, num_cameras=32)
    # radius 2.6 roughly halves the background share of each image (more
    # foreground rays per batch) at the cost of clipping ~1% of silhouette
    # pixels at the frame edge
    spec = replace(spec, rig=replace(spec.rig, elevation_range=(25.0, 31.0),
                                     radius=2.6))
    scene = generate_scene(spec)
    centers = np.array([v.camera.center() for v in scene.views])
    azimuth = np.arctan2(centers[:, 2], centers[:, 0])
    cluster = [int(i) for i in np.argsort(azimuth, kind="stable")[:4]]
    held = cluster[1]
    train_scene = Scene(views=[scene.views[i] for i in cluster if i != held])
    return train_scene, scene.views[held]


def render_held_out(model, train_scene: Scene, held_view, samples: int):
    probe = Scene(views=train_scene.views + [held_view])
    target = len(probe.views) - 1
    inputs = select_input_views(probe, target, model.config.num_views,
                                "nearest", np.random.default_rng(0))
    with ad.no_grad():
        encoded = model.encode_views(
            np.stack([probe.views[i].image for i in inputs]),
            [probe.views[i].camera for i in inputs])
        return render_image(model, encoded, held_view.camera,
                            samples_per_ray=samples)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--preset", choices=sorted(PRESETS), default="smoke")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--scene-seed", type=int, default=11)
    parser.add_argument("--steps", type=int, help="override the preset")
    parser.add_argument("--out", required=True)
    args = parser.parse_args()
    p = dict(PRESETS[args.preset])
    if args.steps:
        p["steps"] = args.steps

    train_scene, held = overfit_split(args.scene_seed, p["image_size"])

    config = ModelConfig(
        encoder=EncoderConfig(num_blocks=p["blocks"], channels=p["channels"],
                              num_heads=p["heads"]),
        decoder=DecoderConfig(width=p["width"], mlp_layers=p["mlp_layers"],
                              pe_frequencies=p["pe_frequencies"]),
        groups=(2, 8), num_views=2)
    model = Model(config, seed=args.seed)
    # random selection shuffles the input pair's order across steps; with a
    # fixed order the texture prior becomes order-brittle at eval time
    tc = TrainConfig(steps=p["steps"], rays_per_batch=p["rays"],
                     samples_per_ray=p["samples"], seed=args.seed,
                     view_selection="random",
                     log_every=50, val_every=max(1, p["steps"] // 20),
                     checkpoint_every=max(1, p["steps"] // 5))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # persist the probe scene (training views + held-out view last) so the
    # render/eval/diagnose commands can be pointed at this run afterwards
    save_scene(Scene(views=train_scene.views + [held]), out / "scene")
    t0 = time.monotonic()
    result = train([train_scene], model, tc, out_dir=out,
                   val_scenes=[Scene(views=train_scene.views + [held])])
    minutes = (time.monotonic() - t0) / 60

    rendered = render_held_out(model, train_scene, held, p["eval_samples"])
    final_psnr = psnr(np.clip(rendered.image, 0, 1), held.image)
    first_loss = result.log_rows[0]["loss"]
    last_loss = result.log_rows[-1]["loss"]

    depth_by_ckpt = {}
    for ckpt in sorted(out.glob("step_*.ckpt")):
        m = load_checkpoint(ckpt)
        r = render_held_out(m, train_scene, held, p["eval_samples"])
        err, acc = depth_metrics(r.depth, held.depth)
        depth_by_ckpt[ckpt.stem] = {"abs_error": err, "acc": acc}
        print(f"{ckpt.stem}: depth abs {err:.4f}, acc@0.05 {acc:.3f}")

    err, acc = depth_metrics(rendered.depth, held.depth)
    summary = {
        "preset": args.preset, "seed": args.seed, "steps": p["steps"],
        "minutes": round(minutes, 2),
        "held_out_psnr": final_psnr,
        "loss_step1": first_loss, "loss_final": last_loss,
        "loss_reduction": first_loss / max(last_loss, 1e-12),
        "depth_abs_error": err, "depth_acc": acc,
        "depth_by_checkpoint": depth_by_ckpt,
        "val_psnr_log": [(r["step"], r["val_psnr"]) for r in result.log_rows
                         if r["val_psnr"] is not None],
    }
    (out / "overfit_summary.json").write_text(json.dumps(summary, indent=2))
    print(f"\nheld-out PSNR {final_psnr:.2f} dB | loss {first_loss:.1f} -> "
          f"{last_loss:.3g} ({summary['loss_reduction']:.0f}x) | "
          f"depth acc@0.05 {acc:.3f} | {minutes:.1f} min")
    return 0


if __name__ == "__main__":
    sys.exit(main())
