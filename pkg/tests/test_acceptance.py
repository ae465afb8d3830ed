"""End-to-end acceptance gates, one test per numbered criterion.

Every test funnels its verdict through ``criterion()``, which prints a
``[criterion N] PASS/FAIL: detail`` line and collects it for the terminal
summary (tests/conftest.py), so the per-criterion outcome survives pytest's
stdout capture.

Criteria 4-8 train real models and carry the ``slow`` marker. They run at a
reduced smoke scale by default; ``MATCHFIELD_ACCEPTANCE=desk`` switches them
to the full 64x64 / K=32 protocol (hours on one CPU core).
"""

from __future__ import annotations

import csv
import json
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from matchfield import autodiff as ad
from matchfield.autodiff import Tensor, finite_diff_check
from matchfield.cli import cli, evaluate_scene
from matchfield.decoder import Decoder, DecoderConfig, positional_encode
from matchfield.encoder import Encoder, EncoderConfig
from matchfield.matching import GroupCosineRelation, geometry_prior, group_cosine
from matchfield.metrics import depth_metrics, psnr, ssim
from matchfield.modules import ParamStore
from matchfield.pipeline import Model, ModelConfig, attention_ablation, model_config_to_dict, relation_ablation
from matchfield.renderer import composite, render_image
from matchfield.scenes import CameraRig, generate_scene, load_checkpoint, random_spec, rig_cameras, save_checkpoint
from matchfield.training import TrainConfig, train

REPO = Path(__file__).resolve().parent.parent
RESULTS: list[str] = []

SCALE_NAME = os.environ.get("MATCHFIELD_ACCEPTANCE", "smoke")
SCALES = {
    # smoke keeps the protocol shape but shrinks images, model, and step count
    "smoke": dict(image_size=32, samples=16, steps=3000, rays=128,
                  channels=64, blocks=4, width=96, mlp_layers=4),
    "desk": dict(image_size=64, samples=32, steps=20000, rays=512,
                 channels=128, blocks=6, width=128, mlp_layers=6),
}
if SCALE_NAME not in SCALES:
    raise RuntimeError(f"MATCHFIELD_ACCEPTANCE must be 'smoke' or 'desk', got '{SCALE_NAME}'")

slow = pytest.mark.slow


def criterion(num: int, ok: bool, detail: str) -> None:
    line = f"[criterion {num}] {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# -- criterion 1: finite-difference gradient oracles --------------------------------


def _ws(t: Tensor, w: np.ndarray) -> Tensor:
    """Weighted scalarization; random weights break axis-mixup symmetries."""
    return ad.reduce_sum(ad.mul(t, Tensor(w.astype(np.float64))))


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.sign(x) * (margin + np.abs(x))


def _op_instance_makers():
    """name -> fn(rng) returning (callable, leaf tensors) for one FD check."""

    def simple(op, nargs=2, shape=(2, 3)):
        def make(rng):
            w = rng.standard_normal(shape)
            leaves = [Tensor(rng.standard_normal(shape)) for _ in range(nargs)]
            return (lambda *ts: _ws(op(*ts), w)), leaves
        return make

    def make_div(rng):
        w = rng.standard_normal((2, 3))
        a = Tensor(rng.standard_normal((2, 3)))
        b = Tensor(_away_from_zero(rng, (2, 3), margin=0.5))
        return (lambda x, y: _ws(ad.div(x, y), w)), [a, b]

    def make_matmul(rng):
        w = rng.standard_normal((2, 4))
        a = Tensor(rng.standard_normal((2, 3)))
        b = Tensor(rng.standard_normal((3, 4)))
        return (lambda x, y: _ws(ad.matmul(x, y), w)), [a, b]

    def make_exp(rng):
        w = rng.standard_normal((2, 3))
        a = Tensor(rng.uniform(-1.5, 1.5, (2, 3)))
        return (lambda x: _ws(ad.exp(x), w)), [a]

    def kinked(op, margin):
        def make(rng):
            w = rng.standard_normal((2, 4))
            a = Tensor(_away_from_zero(rng, (2, 4), margin=margin))
            return (lambda x: _ws(op(x), w)), [a]
        return make

    def make_clip_min(rng):
        w = rng.standard_normal((2, 4))
        a = Tensor(0.3 + _away_from_zero(rng, (2, 4), margin=0.05))
        return (lambda x: _ws(ad.clip_min(x, 0.3), w)), [a]

    def make_softmax(rng):
        w = rng.standard_normal((3, 4))
        a = Tensor(rng.standard_normal((3, 4)))
        return (lambda x: _ws(ad.softmax(x), w)), [a]

    def make_layer_norm(rng):
        w = rng.standard_normal((2, 6))
        a = Tensor(rng.standard_normal((2, 6)))
        return (lambda x: _ws(ad.layer_norm(x), w)), [a]

    conv_cases = [dict(stride=1, padding=0), dict(stride=2, padding=1)]

    def make_conv2d(rng):
        case = conv_cases[rng.integers(len(conv_cases))]
        x = Tensor(rng.standard_normal((1, 2, 5, 5)))
        wt = Tensor(rng.standard_normal((3, 2, 3, 3)))
        h = (5 + 2 * case["padding"] - 3) // case["stride"] + 1
        w = rng.standard_normal((1, 3, h, h))
        return (lambda a, b: _ws(ad.conv2d(a, b, **case), w)), [x, wt]

    def make_grid_sample(rng):
        maps = Tensor(rng.standard_normal((2, 3, 4, 5)))
        # fractional parts in [0.1, 0.9]: bilinear is non-smooth at integers
        cx = rng.integers(0, 4, (2, 6)) + rng.uniform(0.1, 0.9, (2, 6))
        cy = rng.integers(0, 3, (2, 6)) + rng.uniform(0.1, 0.9, (2, 6))
        coords = np.stack([cx, cy], axis=-1)
        w = rng.standard_normal((2, 6, 3))
        return (lambda m: _ws(ad.grid_sample(m, coords)[0], w)), [maps]

    def make_concat(rng):
        w = rng.standard_normal((2, 5))
        a = Tensor(rng.standard_normal((2, 3)))
        b = Tensor(rng.standard_normal((2, 2)))
        return (lambda x, y: _ws(ad.concat([x, y], axis=1), w)), [a, b]

    def make_reshape(rng):
        w = rng.standard_normal((3, 4))
        a = Tensor(rng.standard_normal((2, 6)))
        return (lambda x: _ws(ad.reshape(x, (3, 4)), w)), [a]

    def make_transpose(rng):
        w = rng.standard_normal((4, 2, 3))
        a = Tensor(rng.standard_normal((2, 3, 4)))
        return (lambda x: _ws(ad.transpose(x, (2, 0, 1)), w)), [a]

    def make_roll(rng):
        w = rng.standard_normal((2, 4, 4))
        a = Tensor(rng.standard_normal((2, 4, 4)))
        return (lambda x: _ws(ad.roll(x, (1, -2), (1, 2)), w)), [a]

    def make_reduce_sum(rng):
        w = rng.standard_normal((2,))
        a = Tensor(rng.standard_normal((2, 5)))
        return (lambda x: _ws(ad.reduce_sum(x, axis=1), w)), [a]

    def make_reduce_mean(rng):
        w = rng.standard_normal((5,))
        a = Tensor(rng.standard_normal((2, 5)))
        return (lambda x: _ws(ad.reduce_mean(x, axis=0), w)), [a]

    def make_l2_norm(rng):
        w = rng.standard_normal((3,))
        a = Tensor(rng.standard_normal((3, 5)))
        return (lambda x: _ws(ad.l2_norm(x, axis=-1), w)), [a]

    def make_cumsum(rng):
        w = rng.standard_normal((2, 5))
        a = Tensor(rng.standard_normal((2, 5)))
        return (lambda x: _ws(ad.cumsum(x, axis=1), w)), [a]

    def make_slice(rng):
        w = rng.standard_normal((2, 2))
        a = Tensor(rng.standard_normal((4, 4)))
        if rng.integers(2):
            return (lambda x: _ws(x[1:3, 0:2], w)), [a]
        return (lambda x: _ws(x[[0, 2]][:, [1, 3]], w)), [a]

    return {
        "add": simple(ad.add), "sub": simple(ad.sub), "mul": simple(ad.mul),
        "div": make_div, "neg": simple(ad.neg, nargs=1), "matmul": make_matmul,
        "exp": make_exp,
        "softplus": simple(ad.softplus, nargs=1),
        "sigmoid": simple(ad.sigmoid, nargs=1),
        "relu": kinked(ad.relu, margin=0.05),
        "leaky_relu": kinked(lambda x: ad.leaky_relu(x, 0.2), margin=0.05),
        "softmax": make_softmax, "layer_norm": make_layer_norm,
        "conv2d": make_conv2d, "grid_sample": make_grid_sample,
        "concat": make_concat, "reshape": make_reshape,
        "transpose": make_transpose, "roll": make_roll,
        "reduce_sum": make_reduce_sum, "reduce_mean": make_reduce_mean,
        "l2_norm": make_l2_norm, "cumsum": make_cumsum,
        "clip_min": make_clip_min, "slice": make_slice,
    }


def _composite_instance_makers():
    """Gradient checks through the real multi-layer building blocks."""
    enc_store = ParamStore(seed=21, dtype=np.float64)
    encoder = Encoder(enc_store, EncoderConfig(num_blocks=2, channels=8, num_heads=2))

    def make_encoder_block(rng):
        fa = Tensor(0.5 * rng.standard_normal((1, 8, 4, 4)))
        fb = Tensor(0.5 * rng.standard_normal((1, 8, 4, 4)))
        wa = rng.standard_normal((1, 8, 4, 4))
        wb = rng.standard_normal((1, 8, 4, 4))

        def fn(a, b):
            oa, ob = encoder.transform_pairs(a, b)
            return ad.add(_ws(oa, wa), _ws(ob, wb))
        return fn, [fa, fb]

    dec_store = ParamStore(seed=22, dtype=np.float64)
    decoder = Decoder(dec_store, DecoderConfig(width=16, mlp_layers=2,
                                               pe_frequencies=2,
                                               ray_attention_heads=2),
                      prior_dim=9)

    def make_decoder_modulated(rng):
        q = 4
        pts = 0.5 * rng.standard_normal((q, 3))
        encoded_p = positional_encode(pts, 2)
        dirs = rng.standard_normal((q, 3))
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        m = Tensor(0.5 * rng.standard_normal((q, 9)))
        wf = rng.standard_normal((q, 16))
        wc = rng.standard_normal((q, 3))

        def fn(cond):
            feats, colors = decoder.point_features(encoded_p, dirs, cond)
            return ad.add(_ws(feats, wf), _ws(colors, wc))
        return fn, [m]

    def make_ray_density(rng):
        feats = Tensor(0.5 * rng.standard_normal((2, 3, 16)))
        w = rng.standard_normal((2, 3))
        return (lambda f: _ws(decoder.ray_density(f), w)), [feats]

    def make_compositor(rng):
        R, K = 3, 4
        colors = Tensor(rng.uniform(0.1, 0.9, (R, K, 3)))
        raw = Tensor(rng.standard_normal((R, K)))
        deltas = rng.uniform(0.05, 0.3, (R, K))
        bg = rng.uniform(0.0, 1.0, 3) if rng.integers(2) else None
        w = rng.standard_normal((R, 3))

        def fn(c, s):
            pixel, _, _ = composite(c, ad.softplus(s), deltas, background=bg)
            return _ws(pixel, w)
        return fn, [colors, raw]

    return {
        "encoder_block": make_encoder_block,
        "decoder_modulated": make_decoder_modulated,
        "decoder_ray_density": make_ray_density,
        "compositor": make_compositor,
    }


def test_criterion_01_gradient_oracles():
    start = time.monotonic()
    makers = _op_instance_makers()
    composites = _composite_instance_makers()
    instances = 20
    worst = 0.0
    worst_name = ""
    for group in (makers, composites):
        for name, make in group.items():
            rng = np.random.default_rng(list(name.encode()))
            for i in range(instances):
                fn, leaves = make(rng)
                report = finite_diff_check(fn, leaves)
                if not report.passed:
                    # composites hide relu kinks at uncontrollable
                    # pre-activations; a stencil straddling one shows a
                    # step-dependent error that vanishes at a finer step,
                    # while a wrong gradient fails at every step
                    report = finite_diff_check(fn, leaves, step=1e-6)
                err = max(report.max_rel_errors)
                if err > worst:
                    worst, worst_name = err, f"{name}[{i}]"
                assert report.passed, f"{name} instance {i}: {report}"
    elapsed = time.monotonic() - start
    ok = worst <= 1e-5 and elapsed < 120.0
    criterion(1, ok, f"{len(makers)} ops + {len(composites)} composites x "
                     f"{instances} instances, worst rel err {worst:.2e} "
                     f"({worst_name}), {elapsed:.1f}s")


# -- criterion 2: compositor equals the literal per-sample loop ---------------------


def _composite_loop(colors, sigmas, deltas, background=None):
    R, K = sigmas.shape
    pixel = np.zeros((R, 3))
    weights = np.zeros((R, K))
    trans = np.zeros((R, K))
    for r in range(R):
        T = 1.0
        for k in range(K):
            attn = math.exp(-sigmas[r, k] * deltas[r, k])
            trans[r, k] = T
            weights[r, k] = T * (1.0 - attn)
            pixel[r] += weights[r, k] * colors[r, k]
            T *= attn
        if background is not None:
            pixel[r] += T * background
    return pixel, weights, trans


def test_criterion_02_volume_rendering_oracle():
    start = time.monotonic()
    rng = np.random.default_rng(2)
    R, K = 1000, 6
    sig = rng.uniform(0.0, 3.0, (R, K))
    col = rng.uniform(0.0, 1.0, (R, K, 3))
    dlt = rng.uniform(0.01, 0.4, (R, K))
    bg = rng.uniform(0.0, 1.0, 3)

    worst = 0.0
    for background in (None, bg):
        pixel, weights, trans = composite(Tensor(col), Tensor(sig), dlt,
                                          background=background)
        lp, lw, lt = _composite_loop(col, sig, dlt, background)
        worst = max(worst,
                    float(np.max(np.abs(pixel.data - lp))),
                    float(np.max(np.abs(weights.data - lw))),
                    float(np.max(np.abs(trans.data - lt))))

    # constant-input telescoping: total thickness K*sigma*delta in closed form
    sigma0, delta0 = 0.7, 0.12
    c0 = np.array([0.3, 0.6, 0.9])
    pixel, weights, _ = composite(
        Tensor(np.tile(c0, (4, K, 1))),
        Tensor(np.full((4, K), sigma0)),
        np.full((4, K), delta0), background=bg)
    leftover = math.exp(-K * sigma0 * delta0)
    closed = c0 * (1.0 - leftover) + bg * leftover
    closed_err = float(np.max(np.abs(pixel.data - closed)))
    telescope_err = float(np.max(np.abs(
        weights.data.sum(axis=1) + leftover - 1.0)))

    elapsed = time.monotonic() - start
    ok = worst <= 1e-6 and closed_err <= 1e-6 and telescope_err <= 1e-6 and elapsed < 10.0
    criterion(2, ok, f"loop vs vectorized on {R} rays: {worst:.2e}; closed form "
                     f"{closed_err:.2e}; weight telescoping {telescope_err:.2e}; "
                     f"{elapsed:.1f}s")


# -- criterion 3: matching-prior invariants ------------------------------------------


def test_criterion_03_geometry_prior_invariants():
    rng = np.random.default_rng(3)
    store = ParamStore(seed=9, dtype=np.float64)
    encoder = Encoder(store, EncoderConfig(num_blocks=1, channels=8, num_heads=1))
    relation = GroupCosineRelation(2, 8)
    cameras = rig_cameras(CameraRig(count=4), 16, rng)
    images = rng.uniform(0.0, 1.0, (4, 16, 16, 3))
    points = rng.uniform(-0.8, 0.8, (40, 3))

    encoded = encoder.encode(images)
    z_ref = geometry_prior(points, encoded, cameras, relation).data
    in_range = float(np.max(np.abs(z_ref)))

    perm_err = 0.0
    for _ in range(100):
        perm = rng.permutation(4)
        enc_p = encoder.encode(images[perm])
        z_p = geometry_prior(points, enc_p, [cameras[i] for i in perm],
                             relation).data
        perm_err = max(perm_err, float(np.max(np.abs(z_p - z_ref))))

    sym_err = 0.0
    scale_err = 0.0
    for _ in range(20):
        a = Tensor(rng.standard_normal((7, 16)))
        b = Tensor(rng.standard_normal((7, 16)))
        s_ab = group_cosine(a, b, 4).data
        s_ba = group_cosine(b, a, 4).data
        sym_err = max(sym_err, float(np.max(np.abs(s_ab - s_ba))))
        alpha, beta = rng.uniform(0.5, 4.0, 2)
        s_scaled = group_cosine(Tensor(alpha * a.data),
                                Tensor(beta * b.data), 4).data
        scale_err = max(scale_err, float(np.max(np.abs(s_scaled - s_ab))))

    ok = in_range <= 1.0 and perm_err <= 1e-6 and sym_err <= 1e-6 and scale_err <= 1e-6
    criterion(3, ok, f"|z| max {in_range:.6f} (<= 1); view-permutation drift "
                     f"{perm_err:.2e} over 100 orderings; pair symmetry "
                     f"{sym_err:.2e}; positive-scale drift {scale_err:.2e}")


# -- criteria 4 and 5: ablation directions (slow) ------------------------------------


def _ablation_base() -> ModelConfig:
    p = SCALES[SCALE_NAME]
    return ModelConfig(
        encoder=EncoderConfig(num_blocks=p["blocks"], channels=p["channels"],
                              num_heads=1),
        decoder=DecoderConfig(width=p["width"], mlp_layers=p["mlp_layers"]),
        groups=(2, 8), num_views=3)


class AblationRunner:
    """Trains one configuration per (name, seed) and scores held-out PSNR."""

    def __init__(self, out_root: Path):
        p = SCALES[SCALE_NAME]
        self.params = p
        self.out_root = out_root
        self.train_scenes = [generate_scene(random_spec(100 + i, p["image_size"], 8))
                             for i in range(12)]
        self.val_scenes = [generate_scene(random_spec(900 + i, p["image_size"], 8))
                           for i in range(4)]
        base = _ablation_base()
        self.configs = dict(attention_ablation(base))
        self.configs.update(dict(relation_ablation(base)))
        self._scores: dict[tuple[str, int], float] = {}

    def score(self, name: str, seed: int) -> float:
        # identical configs under different names (full attention row vs the
        # default relation row) share one training run
        config = self.configs[name]
        key = (json.dumps(model_config_to_dict(config), sort_keys=True), seed)
        if key in self._scores:
            return self._scores[key]
        p = self.params
        model = Model(config, seed=seed)
        tc = TrainConfig(steps=p["steps"], rays_per_batch=p["rays"],
                         samples_per_ray=p["samples"], seed=seed,
                         log_every=max(1, p["steps"] // 10))
        train(self.train_scenes, model, tc,
              out_dir=self.out_root / f"{name.replace('/', 'x')}_s{seed}")
        vals = []
        for scene in self.val_scenes:
            report = evaluate_scene(model, scene, samples=p["samples"])
            vals.extend(v.psnr for v in report.views if math.isfinite(v.psnr))
        score = float(np.mean(vals))
        self._scores[key] = score
        return score


@pytest.fixture(scope="module")
def ablation_runner(tmp_path_factory):
    return AblationRunner(tmp_path_factory.mktemp("ablation"))


@slow
def test_criterion_04_attention_ablation_direction(ablation_runner):
    s = {name: ablation_runner.score(name, seed=0)
         for name in ("cnn", "cnn+cross", "cnn+self+cross+ray")}
    gap_cross = s["cnn+cross"] - s["cnn"]
    gap_full = s["cnn+self+cross+ray"] - s["cnn"]
    ok = gap_cross >= 0.5 and gap_full >= 0.8
    criterion(4, ok, f"cnn {s['cnn']:.2f} dB, +cross {s['cnn+cross']:.2f} "
                     f"({gap_cross:+.2f}, need >= +0.5), full "
                     f"{s['cnn+self+cross+ray']:.2f} ({gap_full:+.2f}, need "
                     f">= +0.8) [{SCALE_NAME} scale]")


@slow
def test_criterion_05_relation_ablation_direction(ablation_runner):
    trio = ("group_cosine", "cosine", "concat")

    def scores(seed):
        return {name: ablation_runner.score(name, seed) for name in trio}

    def gaps(s):
        return s["group_cosine"] - s["cosine"], s["cosine"] - s["concat"]

    s0 = scores(0)
    g1, g2 = gaps(s0)
    if g1 >= 0.2 and g2 >= 0.2:
        criterion(5, True, f"seed 0: group {s0['group_cosine']:.2f} >= cosine "
                           f"{s0['cosine']:.2f} (+{g1:.2f}) >= concat "
                           f"{s0['concat']:.2f} (+{g2:.2f}) [{SCALE_NAME} scale]")
        return
    # flagged: decide on the median across three seeds
    all_scores = [s0, scores(1), scores(2)]
    med = {name: float(np.median([s[name] for s in all_scores])) for name in trio}
    m1, m2 = gaps(med)
    ok = m1 >= 0.2 and m2 >= 0.2
    criterion(5, ok, f"seed 0 flagged (gaps {g1:+.2f}/{g2:+.2f}); 3-seed median: "
                     f"group {med['group_cosine']:.2f} >= cosine {med['cosine']:.2f} "
                     f"(+{m1:.2f}) >= concat {med['concat']:.2f} (+{m2:.2f}) "
                     f"[{SCALE_NAME} scale]")


# -- criteria 6-8: single-scene overfit, depth, and the similarity trace (slow) ------


@pytest.fixture(scope="module")
def overfit_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("overfit")
    runs = {}
    for seed in (0, 1, 2):
        out = root / f"seed{seed}"
        proc = subprocess.run(
            [sys.executable, str(REPO / "scripts" / "run_overfit.py"),
             "--preset", SCALE_NAME, "--seed", str(seed), "--out", str(out)],
            cwd=REPO, capture_output=True, text=True)
        (out / "run.log").parent.mkdir(parents=True, exist_ok=True)
        (out / "run.log").write_text(proc.stdout + proc.stderr)
        assert proc.returncode == 0, f"overfit run seed {seed} failed:\n{proc.stderr[-2000:]}"
        runs[seed] = json.loads((out / "overfit_summary.json").read_text())
    return root, runs


@slow
def test_criterion_06_overfit_psnr_and_loss(overfit_runs):
    _, runs = overfit_runs
    psnrs = [runs[s]["held_out_psnr"] for s in sorted(runs)]
    reductions = [runs[s]["loss_reduction"] for s in sorted(runs)]
    minutes = [runs[s]["minutes"] for s in sorted(runs)]
    med_psnr = float(np.median(psnrs))
    med_red = float(np.median(reductions))
    ok = med_psnr >= 25.0 and med_red >= 100.0
    criterion(6, ok, f"held-out PSNR {psnrs[0]:.2f}/{psnrs[1]:.2f}/{psnrs[2]:.2f} dB "
                     f"(median {med_psnr:.2f}, need >= 25), loss reduction median "
                     f"{med_red:.0f}x (need >= 100), {max(minutes):.1f} min/run "
                     f"[{SCALE_NAME} scale]")


@slow
def test_criterion_07_overfit_depth(overfit_runs):
    _, runs = overfit_runs
    names = sorted(runs[0]["depth_by_checkpoint"])   # step_001000 .. step_005000
    after_1k = [n for n in names if int(n.split("_")[1]) >= 1000]
    med_err = [float(np.median([runs[s]["depth_by_checkpoint"][n]["abs_error"]
                                for s in runs])) for n in after_1k]
    monotone = all(b <= a + 1e-9 for a, b in zip(med_err, med_err[1:]))
    med_acc = float(np.median([runs[s]["depth_acc"] for s in runs]))
    ok = med_acc >= 0.6 and monotone
    seq = "/".join(f"{e:.3f}" for e in med_err)
    criterion(7, ok, f"median foreground acc@0.05 {med_acc:.3f} (need >= 0.6); "
                     f"median abs err across checkpoints {seq} "
                     f"{'nonincreasing' if monotone else 'NOT nonincreasing'} "
                     f"[{SCALE_NAME} scale]")


@slow
def test_criterion_08_similarity_density_trace(overfit_runs):
    root, _ = overfit_runs
    run_dir = root / "seed0"
    out_csv = run_dir / "diagnose.csv"
    rc = cli(["diagnose", "--checkpoint", str(run_dir / "final.ckpt"),
              "--scene-dir", str(run_dir / "scene"),
              "--rays", "128", "--samples", "32", "--out", str(out_csv)])
    assert rc == 0

    per_ray: dict[int, list[tuple[float, float]]] = {}
    with open(out_csv, newline="") as f:
        for row in csv.DictReader(f):
            per_ray.setdefault(int(row["ray"]), []).append(
                (float(row["cosine"]), float(row["sigma"])))
    correlations = []
    for samples in per_ray.values():
        cos = np.array([c for c, _ in samples])
        sig = np.array([s for _, s in samples])
        if cos.std() < 1e-12 or sig.std() < 1e-12:
            continue
        correlations.append(float(np.corrcoef(cos, sig)[0, 1]))
    med = float(np.median(correlations))
    ok = len(per_ray) >= 100 and med > 0.0
    note = ("" if med >= 0.2 else
            " (note: below 0.2, non-gating; the trace is a qualitative signal)")
    criterion(8, ok, f"{len(per_ray)} foreground rays, median per-ray "
                     f"correlation(cosine, density) {med:.3f} (need > 0){note}")


# -- criterion 9: determinism and serialization ---------------------------------------


def _micro_model_and_scene():
    config = ModelConfig(
        encoder=EncoderConfig(num_blocks=1, channels=8, num_heads=1),
        decoder=DecoderConfig(width=8, mlp_layers=2, pe_frequencies=2,
                              ray_attention_heads=2),
        groups=(2, 4), num_views=2)
    scene = generate_scene(random_spec(7, image_size=16, num_cameras=3))
    return config, scene


def test_criterion_09_determinism_and_serialization(tmp_path):
    config, scene = _micro_model_and_scene()
    tc = TrainConfig(steps=100, rays_per_batch=16, samples_per_ray=4,
                     seed=3, log_every=10)

    paths = []
    for run in ("a", "b"):
        model = Model(config, seed=5)
        train([scene], model, tc, out_dir=tmp_path / run)
        paths.append(tmp_path / run)
    ckpt_a = (paths[0] / "final.ckpt").read_bytes()
    ckpt_b = (paths[1] / "final.ckpt").read_bytes()
    identical_ckpt = ckpt_a == ckpt_b
    identical_log = ((paths[0] / "train_log.csv").read_text()
                     == (paths[1] / "train_log.csv").read_text())

    reloaded = load_checkpoint(paths[0] / "final.ckpt")
    save_checkpoint(reloaded, tmp_path / "resaved.ckpt")
    roundtrip = (tmp_path / "resaved.ckpt").read_bytes() == ckpt_a

    inputs = [0, 1]
    encoded = reloaded.encode_views(
        np.stack([scene.views[i].image for i in inputs]),
        [scene.views[i].camera for i in inputs])
    r_small = render_image(reloaded, encoded, scene.views[2].camera,
                           chunk_size=17, samples_per_ray=4)
    r_large = render_image(reloaded, encoded, scene.views[2].camera,
                           chunk_size=1024, samples_per_ray=4)
    chunk_free = (np.array_equal(r_small.image, r_large.image)
                  and np.array_equal(r_small.depth, r_large.depth))

    ok = identical_ckpt and identical_log and roundtrip and chunk_free
    criterion(9, ok, f"100-step retrain checkpoint identical={identical_ckpt}, "
                     f"log identical={identical_log}, save/load/save "
                     f"identical={roundtrip}, render chunk-invariant={chunk_free}")


# -- criterion 10: metric implementations vs loop references --------------------------


def _psnr_loop(a, b, mask=None):
    se, n = 0.0, 0
    for y in range(a.shape[0]):
        for x in range(a.shape[1]):
            if mask is not None and not mask[y, x]:
                continue
            pa = np.atleast_1d(a[y, x])
            pb = np.atleast_1d(b[y, x])
            for va, vb in zip(pa, pb):
                se += (float(va) - float(vb)) ** 2
                n += 1
    mse = se / n
    return math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)


def _gray_loop(img):
    if img.ndim == 2:
        return img.astype(np.float64)
    out = np.zeros(img.shape[:2])
    for y in range(img.shape[0]):
        for x in range(img.shape[1]):
            r, g, b = img[y, x]
            out[y, x] = 0.299 * float(r) + 0.587 * float(g) + 0.114 * float(b)
    return out


def _ssim_loop(a, b):
    ga, gb = _gray_loop(a), _gray_loop(b)
    win, sigma, c1, c2 = 11, 1.5, 0.01 ** 2, 0.03 ** 2
    kern = [[math.exp(-((u - 5) ** 2) / (2 * sigma ** 2))
             * math.exp(-((v - 5) ** 2) / (2 * sigma ** 2))
             for v in range(win)] for u in range(win)]
    total = sum(sum(row) for row in kern)
    kern = [[k / total for k in row] for row in kern]

    H, W = ga.shape
    vals = []
    for i in range(H - win + 1):
        for j in range(W - win + 1):
            mu_a = mu_b = ea2 = eb2 = eab = 0.0
            for u in range(win):
                for v in range(win):
                    k = kern[u][v]
                    pa, pb = ga[i + u, j + v], gb[i + u, j + v]
                    mu_a += k * pa
                    mu_b += k * pb
                    ea2 += k * pa * pa
                    eb2 += k * pb * pb
                    eab += k * pa * pb
            var_a = ea2 - mu_a ** 2
            var_b = eb2 - mu_b ** 2
            cov = eab - mu_a * mu_b
            vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                        / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return sum(vals) / len(vals)


def _depth_loop(pred, gt, tau=0.05):
    errs = []
    for y in range(gt.shape[0]):
        for x in range(gt.shape[1]):
            if gt[y, x] > 0:
                errs.append(abs(float(pred[y, x]) - float(gt[y, x])))
    acc = sum(1 for e in errs if e < tau) / len(errs)
    return sum(errs) / len(errs), acc


def test_criterion_10_metric_oracles():
    rng = np.random.default_rng(10)
    worst = 0.0
    for i in range(100):
        H, W = 11 + int(rng.integers(4)), 11 + int(rng.integers(6))
        rgb = i % 2 == 0
        shape = (H, W, 3) if rgb else (H, W)
        a = rng.uniform(0.0, 1.0, shape)
        b = a.copy() if i == 50 else np.clip(a + rng.normal(0, 0.1, shape), 0, 1)

        ours_p, ref_p = psnr(a, b), _psnr_loop(a, b)
        if math.isinf(ref_p):
            assert math.isinf(ours_p)
        else:
            worst = max(worst, abs(ours_p - ref_p))
        if i % 4 == 0 and not math.isinf(ref_p):
            mask = rng.uniform(size=(H, W)) < 0.6
            mask[H // 2, W // 2] = True
            worst = max(worst, abs(psnr(a, b, mask=mask) - _psnr_loop(a, b, mask)))

        worst = max(worst, abs(ssim(a, b) - _ssim_loop(a, b)))

        gt = np.where(rng.uniform(size=(H, W)) < 0.7,
                      rng.uniform(1.0, 5.0, (H, W)), 0.0)
        gt[H // 2, W // 2] = 2.0
        pred = gt + rng.normal(0, 0.05, (H, W))
        (err_o, acc_o), (err_r, acc_r) = depth_metrics(pred, gt), _depth_loop(pred, gt)
        worst = max(worst, abs(err_o - err_r), abs(acc_o - acc_r))

    ok = worst <= 1e-9
    criterion(10, ok, f"PSNR/SSIM/depth vs loop references on 100 pairs, "
                      f"worst abs diff {worst:.2e} (tol 1e-9)")
