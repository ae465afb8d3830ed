"""End-to-end optimization: photometric loss, AdamW, clipping, one-cycle.

The loop trains purely from pixels. Each step draws a scene, a held-out
target view, and the input views nearest to it, renders a random ray batch,
and backprops the squared color error. Cross-view attention gradients are
clipped to unit global norm before the optimizer runs; encoder and decoder
parameter groups carry separate learning-rate peaks on a shared schedule.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cameras import generate_rays, sample_depths
from .metrics import psnr
from .modules import ENCODER_GROUPS, GROUP_DECODER, GROUP_ENC_TRANSFORMER
from .renderer import composite, render_image
from .scenes import Scene, save_checkpoint

LOG_COLUMNS = ("step", "loss", "lr_encoder", "lr_decoder",
               "grad_norm_encoder", "val_psnr")


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    rays_per_batch: int = 512
    samples_per_ray: int = 32
    lr_encoder: float = 5e-5
    lr_decoder: float = 5e-4
    clip_norm_encoder: float = 1.0
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    loss_reduction: str = "sum"      # "mean" rescales both lrs by the batch size
    view_selection: str = "nearest"  # or "random"
    seed: int = 0
    log_every: int = 10
    val_every: int = 0               # 0 disables validation renders
    checkpoint_every: int = 0        # 0 keeps only the final checkpoint

    def __post_init__(self):
        if self.steps < 0:
            raise TrainingError(f"steps must be >= 0, got {self.steps}")
        positive = {"rays_per_batch": self.rays_per_batch,
                    "samples_per_ray": self.samples_per_ray,
                    "lr_encoder": self.lr_encoder,
                    "lr_decoder": self.lr_decoder,
                    "clip_norm_encoder": self.clip_norm_encoder,
                    "log_every": self.log_every}
        for name, value in positive.items():
            if value <= 0:
                raise TrainingError(f"{name} must be positive, got {value}")
        if self.weight_decay < 0:
            raise TrainingError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.loss_reduction not in ("sum", "mean"):
            raise TrainingError(f"loss_reduction must be 'sum' or 'mean', "
                                f"got '{self.loss_reduction}'")
        if self.view_selection not in ("nearest", "random"):
            raise TrainingError(f"view_selection must be 'nearest' or 'random', "
                                f"got '{self.view_selection}'")


def photometric_loss(rendered: Tensor, target: np.ndarray,
                     reduction: str = "sum") -> Tensor:
    """Sum over the batch of squared color error; mean divides by ray count."""
    t = Tensor(np.asarray(target, dtype=rendered.dtype))
    diff = rendered - t
    loss = ad.reduce_sum(diff * diff)
    if reduction == "mean":
        loss = loss * (1.0 / rendered.shape[0])
    return loss


class AdamW:
    """Adam with decoupled weight decay over a ParamStore.

    Learning rates are supplied per step as a {group: lr} map so the
    schedule stays outside. Parameters whose grad is None are skipped
    entirely (disabled submodules under ablation never receive gradients).
    """

    def __init__(self, store, weight_decay: float = 1e-4,
                 betas: tuple = (0.9, 0.999), eps: float = 1e-8):
        self.store = store
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(e.tensor.data) for name, e in store.items()}
        self.v = {name: np.zeros_like(e.tensor.data) for name, e in store.items()}

    def step(self, lrs: dict) -> None:
        self.t += 1
        b1, b2 = self.betas
        correct1 = 1.0 - b1 ** self.t
        correct2 = 1.0 - b2 ** self.t
        for name, entry in self.store.items():
            g = entry.tensor.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter "
                                    f"'{name}' at optimizer step {self.t}")
            lr = lrs[entry.group]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / correct1) / (np.sqrt(v / correct2) + self.eps)
            if entry.decay and self.weight_decay:
                update = update + self.weight_decay * entry.tensor.data
            entry.tensor.data -= lr * update


def clip_global_norm(grads, max_norm: float) -> float:
    """Scale the grads in place so their joint L2 norm is <= max_norm.

    Returns the pre-clip norm.
    """
    total = math.sqrt(sum(float((np.asarray(g, dtype=np.float64) ** 2).sum())
                          for g in grads))
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


def one_cycle_lr(step: int, total_steps: int, peak_lr: float) -> float:
    """Linear warmup peak/25 -> peak over 10% of steps, cosine to peak/1e4."""
    if not 0 <= step < total_steps:
        raise TrainingError(f"step {step} outside [0, {total_steps})")
    warm = max(1, round(0.1 * total_steps))
    start = peak_lr / 25.0
    if step < warm:
        return start + (peak_lr - start) * (step / warm)
    end = peak_lr / 1e4
    u = (step - warm) / max(total_steps - warm, 1)
    return end + 0.5 * (peak_lr - end) * (1.0 + math.cos(math.pi * u))


def select_input_views(scene: Scene, target_index: int, count: int,
                       mode: str, rng: np.random.Generator) -> list[int]:
    """Pick input view indices for a target view, never including it."""
    others = [i for i in range(len(scene.views)) if i != target_index]
    if len(others) < count:
        raise TrainingError(f"scene has {len(scene.views)} views; need "
                            f"{count} inputs plus a held-out target")
    if mode == "random":
        return list(rng.choice(others, size=count, replace=False))
    centers = np.array([v.camera.center() for v in scene.views])
    d = np.linalg.norm(centers - centers[target_index], axis=1)
    d[target_index] = np.inf
    return list(np.argsort(d, kind="stable")[:count])


@dataclass
class TrainResult:
    model: object
    log_rows: list
    checkpoint_path: Path | None
    log_path: Path | None


def _render_validation(model, scene: Scene, config: TrainConfig) -> float:
    """PSNR of a full render of the scene's last view from its nearest inputs."""
    target = len(scene.views) - 1
    inputs = select_input_views(scene, target, model.config.num_views,
                                "nearest", np.random.default_rng(0))
    with ad.no_grad():
        encoded = model.encode_views(
            np.stack([scene.views[i].image for i in inputs]),
            [scene.views[i].camera for i in inputs])
        rendered = render_image(model, encoded, scene.views[target].camera,
                                samples_per_ray=config.samples_per_ray)
    return psnr(np.clip(rendered.image, 0.0, 1.0), scene.views[target].image)


def train(dataset, model, config: TrainConfig, out_dir=None,
          val_scenes=None) -> TrainResult:
    """Optimize the model on a list of scenes. Deterministic in config.seed.

    Writes train_log.csv plus final (and optionally periodic) checkpoints
    under out_dir when given. A non-finite loss or gradient aborts with the
    step id after saving the last parameter state to abort.ckpt.
    """
    if not dataset:
        raise TrainingError("dataset is empty")
    rng = np.random.default_rng(config.seed)
    opt = AdamW(model.store, weight_decay=config.weight_decay,
                betas=config.betas, eps=config.eps)
    clip_names = model.store.group_names(GROUP_ENC_TRANSFORMER)

    out = Path(out_dir) if out_dir is not None else None
    log_path = None
    writer = None
    log_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "train_log.csv"
        log_file = open(log_path, "w", newline="")
        writer = csv.writer(log_file)
        writer.writerow(LOG_COLUMNS)

    # sum-mode follows the contract directly; mean-mode keeps update
    # magnitudes identical by scaling both peaks with the batch size
    lr_scale = config.rays_per_batch if config.loss_reduction == "mean" else 1.0

    log_rows = []
    checks_were_on = ad.finite_checks_enabled()
    ad.set_finite_checks(False)
    try:
        for step in range(config.steps):
            scene = dataset[int(rng.integers(len(dataset)))]
            target_idx = int(rng.integers(len(scene.views)))
            input_idx = select_input_views(scene, target_idx,
                                           model.config.num_views,
                                           config.view_selection, rng)
            target_view = scene.views[target_idx]
            cam = target_view.camera

            xs = rng.integers(0, cam.width, size=config.rays_per_batch)
            ys = rng.integers(0, cam.height, size=config.rays_per_batch)
            pixels = np.stack([xs, ys], axis=1).astype(np.float64)
            origins, dirs = generate_rays(cam, pixels)
            t, delta = sample_depths(cam.near, cam.far, config.samples_per_ray,
                                     config.rays_per_batch, rng)

            encoded = model.encode_views(
                np.stack([scene.views[i].image for i in input_idx]),
                [scene.views[i].camera for i in input_idx])
            colors, sigmas = model.query_rays(encoded, origins, dirs, t, delta)
            pixel_colors, _, _ = composite(colors, sigmas,
                                           delta.astype(np.float32))
            gt = target_view.image[ys, xs].astype(np.float32)
            loss = photometric_loss(pixel_colors, gt, config.loss_reduction)

            if not np.isfinite(loss.data):
                if out is not None:
                    save_checkpoint(model, out / "abort.ckpt")
                raise TrainingError(
                    f"non-finite loss at step {step + 1}"
                    + (f"; last checkpoint saved to {out / 'abort.ckpt'}"
                       if out is not None else ""))

            loss.backward()
            clip_grads = [model.store.get(n).grad for n in clip_names
                          if model.store.get(n).grad is not None]
            pre_norm = clip_global_norm(clip_grads, config.clip_norm_encoder)
            grad_norm = min(pre_norm, config.clip_norm_encoder)

            lr_enc = one_cycle_lr(step, config.steps,
                                  config.lr_encoder * lr_scale)
            lr_dec = one_cycle_lr(step, config.steps,
                                  config.lr_decoder * lr_scale)
            lrs = {g: lr_enc for g in ENCODER_GROUPS}
            lrs[GROUP_DECODER] = lr_dec
            try:
                opt.step(lrs)
            except TrainingError as e:
                if out is not None:
                    save_checkpoint(model, out / "abort.ckpt")
                raise TrainingError(f"step {step + 1}: {e}") from e
            model.store.zero_grads()

            val_psnr = None
            if (config.val_every and val_scenes
                    and (step + 1) % config.val_every == 0):
                val_psnr = _render_validation(model, val_scenes[0], config)

            if (step + 1) % config.log_every == 0 or step == 0 or val_psnr is not None:
                row = {"step": step + 1, "loss": float(loss.data),
                       "lr_encoder": lr_enc, "lr_decoder": lr_dec,
                       "grad_norm_encoder": grad_norm, "val_psnr": val_psnr}
                log_rows.append(row)
                if writer is not None:
                    writer.writerow([row["step"], row["loss"], row["lr_encoder"],
                                     row["lr_decoder"], row["grad_norm_encoder"],
                                     "" if val_psnr is None else val_psnr])
                    log_file.flush()

            if (out is not None and config.checkpoint_every
                    and (step + 1) % config.checkpoint_every == 0):
                save_checkpoint(model, out / f"step_{step + 1:06d}.ckpt")
    finally:
        ad.set_finite_checks(checks_were_on)
        if log_file is not None:
            log_file.close()

    checkpoint_path = None
    if out is not None:
        checkpoint_path = out / "final.ckpt"
        save_checkpoint(model, checkpoint_path)
    return TrainResult(model=model, log_rows=log_rows,
                       checkpoint_path=checkpoint_path, log_path=log_path)
