#!/usr/bin/env python3
"""Generate a scene corpus and sweep the ablation axes through the CLI.

Thin driver: writes preset TOML configs, generates 12 training and 4
held-out scenes, then shells out to the command-line interface once per
requested axis (attention, relation, resolution). Every result the sweep
produces comes from the same public surface a user would script, so the
numbers in ablate_<axis>.json are reproducible by hand.

The smoke preset fits an evening on one CPU core; desk is the full-size
protocol (hours per configuration).
"""

import argparse
import subprocess
import sys
from pathlib import Path

PRESETS = {
    "smoke": dict(image_size=32, cameras=8, channels=64, blocks=4, width=96,
                  mlp_layers=4, rays=128, samples=16, steps=3000),
    "desk": dict(image_size=64, cameras=8, channels=128, blocks=6, width=128,
                 mlp_layers=6, rays=512, samples=32, steps=20000),
}

CONFIG_TEMPLATE = """\
[generate]
scenes = {scenes}
image_size = {image_size}
cameras = {cameras}
seed = {scene_seed}

[model]
num_views = 3

[model.encoder]
num_blocks = {blocks}
channels = {channels}
num_heads = 1

[model.decoder]
width = {width}
mlp_layers = {mlp_layers}

[train]
steps = {steps}
rays_per_batch = {rays}
samples_per_ray = {samples}
log_every = {log_every}
"""


def run_cli(args: list[str]) -> None:
    cmd = [sys.executable, "-m", "matchfield.cli", *args]
    print("+", " ".join(cmd[2:]))
    subprocess.run(cmd, check=True)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--preset", choices=sorted(PRESETS), default="smoke")
    parser.add_argument("--axes", nargs="+",
                        default=["attention", "relation", "resolution"])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--steps", type=int, help="override the preset")
    parser.add_argument("--out", required=True)
    args = parser.parse_args()
    p = dict(PRESETS[args.preset])
    if args.steps:
        p["steps"] = args.steps
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    train_cfg = out / "config.toml"
    train_cfg.write_text(CONFIG_TEMPLATE.format(
        scenes=12, scene_seed=100, log_every=max(1, p["steps"] // 10), **p))
    val_cfg = out / "config_val.toml"
    val_cfg.write_text(CONFIG_TEMPLATE.format(
        scenes=4, scene_seed=900, log_every=max(1, p["steps"] // 10), **p))

    train_scenes = out / "train_scenes"
    val_scenes = out / "val_scenes"
    if not train_scenes.exists():
        run_cli(["generate", "--config", str(train_cfg), "--out", str(train_scenes)])
    if not val_scenes.exists():
        run_cli(["generate", "--config", str(val_cfg), "--out", str(val_scenes)])

    for axis in args.axes:
        # per-variant runs land in <out>/<axis>/<config>/, the summary in
        # <out>/ablate_<axis>.json
        run_cli(["ablate", "--axis", axis, "--config", str(train_cfg),
                 "--scene-dir", str(train_scenes),
                 "--val-scene-dir", str(val_scenes),
                 "--seed", str(args.seed),
                 "--out", str(out)])
        print(f"\nwrote {out / f'ablate_{axis}.json'}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
