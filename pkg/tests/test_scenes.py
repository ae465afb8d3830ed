"""Synthetic scene generation, dataset IO, and checkpoint serialization."""

import json
import zlib

import numpy as np
import pytest

from matchfield import scenes as sc
from matchfield.cameras import Camera, CameraError, generate_rays, project_points
from matchfield.pipeline import (
    Model,
    ModelConfig,
    model_config_from_dict,
    model_config_to_dict,
)
from matchfield.encoder import EncoderConfig
from matchfield.decoder import DecoderConfig
from matchfield.renderer import load_depth_raster


WHITE = (1.0, 1.0, 1.0)
GRAY = (0.5, 0.5, 0.5)


def flat_texture(color=WHITE):
    # a degenerate checker is a constant albedo
    return sc.Checker(cell=10.0, color_a=color, color_b=color)


def head_on_camera(distance=3.0, size=65, focal_scale=1.0, near=0.5, far=6.0):
    """Camera on the -z axis looking at the origin; odd size puts the
    principal point on an exact pixel center."""
    pose = sc.look_at_pose(np.array([0.0, 0.0, -distance]), np.zeros(3))
    K = sc.simple_intrinsics(size, focal_scale)
    return Camera(intrinsics=K, world_to_camera=pose, width=size, height=size,
                  near=near, far=far)


def single_sphere_spec(radius=0.3, seed=0, size=33):
    prim = sc.Sphere(center=(0.0, 0.0, 0.0), radius=radius, texture=flat_texture())
    rig = sc.CameraRig(count=3, radius=3.0, elevation_range=(10.0, 35.0))
    return sc.SyntheticSpec(primitives=(prim,), light=(0.0, 1.0, -0.5),
                            background=(0.0, 0.0, 0.0), rig=rig,
                            image_size=size, seed=seed)


# -- look-at pose and intrinsics helpers --------------------------------------


def test_look_at_pose_is_rigid_and_faces_target():
    rng = np.random.default_rng(3)
    for _ in range(20):
        center = rng.normal(size=3) * 2.0
        target = rng.normal(size=3) * 0.3
        if np.linalg.norm(target - center) < 0.5:
            continue
        pose = sc.look_at_pose(center, target)
        R, t = pose[:3, :3], pose[:3, 3]
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-10)
        assert np.isclose(np.linalg.det(R), 1.0)
        # camera center maps to the origin of camera space
        assert np.allclose(R @ center + t, 0.0, atol=1e-10)
        # the target sits on the +z axis
        cam_t = R @ target + t
        assert cam_t[2] > 0
        assert np.allclose(cam_t[:2], 0.0, atol=1e-10)


def test_look_at_pose_y_axis_points_down_in_world():
    pose = sc.look_at_pose(np.array([0.0, 0.0, -3.0]), np.zeros(3))
    # rows of R are the camera axes in world coordinates; image y must
    # descend in world up (+y) so rendered images are upright
    assert pose[1, 1] < 0


def test_look_at_pose_rejects_degenerate_direction():
    with pytest.raises(sc.SceneError):
        sc.look_at_pose(np.array([0.0, 2.0, 0.0]), np.zeros(3))  # parallel to up
    with pytest.raises(sc.SceneError):
        sc.look_at_pose(np.zeros(3), np.zeros(3))


def test_simple_intrinsics_center():
    K = sc.simple_intrinsics(65, 1.0)
    assert K[0, 0] == K[1, 1] == 65.0
    assert K[0, 2] == K[1, 2] == 32.0
    assert K[2, 2] == 1.0


# -- procedural textures -------------------------------------------------------


def test_checker_parity_oracle():
    tex = sc.Checker(cell=0.25, color_a=(1.0, 0.0, 0.0), color_b=(0.0, 0.0, 1.0))
    pts = np.array([
        [0.0, 0.0, 0.0],      # cells (0,0,0) -> even
        [0.3, 0.0, 0.0],      # cells (1,0,0) -> odd
        [0.3, 0.3, 0.0],      # (1,1,0) -> even
        [-0.1, 0.0, 0.0],     # floor(-0.4) = -1 -> odd
    ])
    got = sc.albedo(tex, pts)
    assert np.allclose(got[0], (1, 0, 0))
    assert np.allclose(got[1], (0, 0, 1))
    assert np.allclose(got[2], (1, 0, 0))
    assert np.allclose(got[3], (0, 0, 1))


def test_value_noise_range_and_determinism():
    tex = sc.ValueNoise(scale=3.0, octaves=3, color_a=(0.0,) * 3,
                        color_b=(1.0,) * 3, salt=42)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, size=(500, 3))
    a = sc.albedo(tex, pts)
    b = sc.albedo(tex, pts)
    assert np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0
    # not constant over the volume
    assert a.std() > 0.01


def test_value_noise_salt_decorrelates():
    pts = np.random.default_rng(1).uniform(-1, 1, size=(200, 3))
    a = sc.albedo(sc.ValueNoise(3.0, 2, (0,) * 3, (1,) * 3, salt=1), pts)
    b = sc.albedo(sc.ValueNoise(3.0, 2, (0,) * 3, (1,) * 3, salt=2), pts)
    assert not np.allclose(a, b)


def test_value_noise_is_continuous():
    tex = sc.ValueNoise(scale=2.0, octaves=2, color_a=(0,) * 3, color_b=(1,) * 3,
                        salt=7)
    rng = np.random.default_rng(2)
    p = rng.uniform(-0.9, 0.9, size=(300, 3))
    q = p + 1e-4
    dv = np.abs(sc.albedo(tex, p) - sc.albedo(tex, q))
    assert dv.max() < 5e-3


# -- primitive intersection oracles ---------------------------------------------


def trace_one(primitives, origin, direction, light=(0.0, 0.0, -1.0),
              background=(0.0, 0.0, 0.0)):
    res = sc.trace(primitives, light, background,
                   np.asarray(origin, dtype=np.float64)[None, :],
                   np.asarray(direction, dtype=np.float64)[None, :])
    return res.colors[0], res.depths[0], res.hit_index[0]


def test_sphere_head_on_depth():
    prim = sc.Sphere(center=(0, 0, 0), radius=0.3, texture=flat_texture())
    _, depth, idx = trace_one([prim], [0, 0, -3.0], [0, 0, 1.0])
    assert idx == 0
    assert abs(depth - 2.7) < 1e-12


def test_sphere_oblique_depth_closed_form():
    # ray from (0, 0, -3) through a point offset laterally; intersect
    # |o + t d|^2 = r^2 solved by hand via the quadratic formula
    prim = sc.Sphere(center=(0, 0, 0), radius=0.5, texture=flat_texture())
    d = np.array([0.1, 0.05, 1.0])
    d = d / np.linalg.norm(d)
    o = np.array([0.0, 0.0, -3.0])
    b = o @ d
    disc = b * b - (o @ o - 0.25)
    t_ref = -b - np.sqrt(disc)
    _, depth, _ = trace_one([prim], o, d)
    assert abs(depth - t_ref) < 1e-12


def test_sphere_miss_gives_background_and_zero_depth():
    prim = sc.Sphere(center=(0, 0, 0), radius=0.3, texture=flat_texture())
    color, depth, idx = trace_one([prim], [0, 0, -3.0], [0, 1.0, 0.0],
                                  background=(0.2, 0.4, 0.6))
    assert idx == -1
    assert depth == 0.0
    assert np.allclose(color, (0.2, 0.4, 0.6))


def test_ray_from_inside_sphere_misses():
    # camera inside the primitive: no positive front-side hit is reported
    prim = sc.Sphere(center=(0, 0, 0), radius=2.0, texture=flat_texture())
    _, depth, idx = trace_one([prim], [0, 0, 0], [0, 0, 1.0])
    assert idx == -1 and depth == 0.0


def test_box_head_on_depth_and_normal_shading():
    prim = sc.Box(center=(0, 0, 0), half_extents=(0.2, 0.2, 0.2),
                  texture=flat_texture())
    # light along -z: entering face normal is (0,0,-1), so n.l = 1 and the
    # shaded color saturates to the albedo
    color, depth, _ = trace_one([prim], [0, 0, -3.0], [0, 0, 1.0],
                                light=(0, 0, -1.0))
    assert abs(depth - 2.8) < 1e-12
    assert np.allclose(color, 1.0)


def test_box_side_face_hit():
    prim = sc.Box(center=(0, 0, 0), half_extents=(0.25, 0.25, 0.25),
                  texture=flat_texture())
    # ray along -x hits the +x face at distance 2 - 0.25
    _, depth, _ = trace_one([prim], [2.0, 0, 0], [-1.0, 0, 0])
    assert abs(depth - 1.75) < 1e-12


def test_rect_plane_hit_bounds_and_depth():
    plane = sc.RectPlane(center=(0, 0, 0.5), half_extents=(0.4, 0.4, 0.0),
                         texture=flat_texture())
    _, depth, idx = trace_one([plane], [0, 0, -3.0], [0, 0, 1.0])
    assert idx == 0 and abs(depth - 3.5) < 1e-12
    # outside the rectangular extent: miss
    d = np.array([0.5, 0.0, 1.0])
    _, depth2, idx2 = trace_one([plane], [0, 0, -3.0], d / np.linalg.norm(d))
    assert idx2 == -1 and depth2 == 0.0


def test_nearest_primitive_wins():
    far_sphere = sc.Sphere(center=(0, 0, 1.0), radius=0.3,
                           texture=flat_texture((1.0, 0.0, 0.0)))
    near_sphere = sc.Sphere(center=(0, 0, -1.0), radius=0.3,
                            texture=flat_texture((0.0, 1.0, 0.0)))
    _, depth, idx = trace_one([far_sphere, near_sphere], [0, 0, -3.0], [0, 0, 1.0])
    assert idx == 1
    assert abs(depth - 1.7) < 1e-12


def test_lambertian_shading_clamps():
    # normal facing away from the light: only the ambient floor remains
    prim = sc.Sphere(center=(0, 0, 0), radius=0.5, texture=flat_texture(GRAY))
    color, _, _ = trace_one([prim], [0, 0, -3.0], [0, 0, 1.0], light=(0, 0, 1.0))
    assert np.allclose(color, 0.05)  # 0.5 albedo * 0.1 ambient
    # light exactly along the normal: full albedo, capped at 1
    color2, _, _ = trace_one([prim], [0, 0, -3.0], [0, 0, 1.0], light=(0, 0, -1.0))
    assert np.allclose(color2, 0.5)


# -- generated scenes -----------------------------------------------------------


def test_principal_pixel_depth_example():
    # head-on sphere: depth at the principal pixel is distance minus radius
    spec = single_sphere_spec(radius=0.3, size=65)
    cam = head_on_camera(distance=3.0, size=65)
    prim = spec.primitives[0]
    res = sc.trace(spec.primitives, spec.light, spec.background,
                   *generate_rays(cam, np.array([[32.0, 32.0]])))
    assert abs(res.depths[0] - 2.7) < 1e-6
    del prim


def test_generated_scene_shapes_and_background():
    spec = single_sphere_spec(size=33)
    scene = sc.generate_scene(spec)
    assert len(scene.views) == 3
    for view in scene.views:
        assert view.image.shape == (33, 33, 3)
        assert view.depth.shape == (33, 33)
        assert view.camera.width == view.camera.height == 33
        # corner pixels miss the centered sphere: exact background, zero depth
        assert np.allclose(view.image[0, 0], spec.background)
        assert view.depth[0, 0] == 0.0
        assert view.image.min() >= 0.0 and view.image.max() <= 1.0


def test_generated_depth_within_near_far():
    scene = sc.generate_scene(sc.random_spec(5, image_size=33))
    for view in scene.views:
        hits = view.depth > 0
        assert hits.any()
        assert view.depth[hits].min() >= view.camera.near
        assert view.depth[hits].max() <= view.camera.far


def test_generation_is_deterministic():
    a = sc.generate_scene(sc.random_spec(11, image_size=33))
    b = sc.generate_scene(sc.random_spec(11, image_size=33))
    for va, vb in zip(a.views, b.views):
        assert np.array_equal(va.image, vb.image)
        assert np.array_equal(va.depth, vb.depth)
        assert np.array_equal(va.camera.intrinsics, vb.camera.intrinsics)
        assert np.array_equal(va.camera.world_to_camera, vb.camera.world_to_camera)


def test_different_seeds_differ():
    a = sc.generate_scene(sc.random_spec(1, image_size=33))
    b = sc.generate_scene(sc.random_spec(2, image_size=33))
    assert not np.array_equal(a.views[0].image, b.views[0].image)


def test_rig_sees_scene_center():
    spec = sc.random_spec(3, image_size=33)
    scene = sc.generate_scene(spec)
    target = np.asarray(spec.rig.look_at, dtype=np.float64)
    for view in scene.views:
        _, _, front = project_points(target[None, :], view.camera)
        assert front[0]


def test_rig_cameras_have_valid_rotations():
    rig = sc.CameraRig(count=6, radius=3.0, elevation_range=(5.0, 45.0))
    cams = sc.rig_cameras(rig, 33, np.random.default_rng(0))
    assert len(cams) == 6
    centers = np.array([c.center() for c in cams])
    assert np.allclose(np.linalg.norm(centers, axis=1), 3.0, atol=1e-9)


def test_cross_view_depth_consistency():
    """Where a surface point from view a is unoccluded in view b, re-tracing
    the reprojected ray lands at the same world point within 1e-3."""
    scene = sc.generate_scene(sc.random_spec(9, image_size=49))
    spec = sc.random_spec(9, image_size=49)
    cam_a, cam_b = scene.views[0].camera, scene.views[1].camera
    depth_a = scene.views[0].depth

    ys, xs = np.nonzero(depth_a > 0)
    pick = np.random.default_rng(0).choice(len(xs), size=min(400, len(xs)),
                                           replace=False)
    px = np.stack([xs[pick], ys[pick]], axis=1).astype(np.float64)
    origins, dirs = generate_rays(cam_a, px)
    world = origins + depth_a[ys[pick], xs[pick], None] * dirs

    px_b, _, front = project_points(world, cam_b)
    c_b = cam_b.center()
    expected_t = np.linalg.norm(world - c_b, axis=1)

    inside = front & (px_b[:, 0] >= 0) & (px_b[:, 0] <= cam_b.width - 1) \
        & (px_b[:, 1] >= 0) & (px_b[:, 1] <= cam_b.height - 1)
    o_b, d_b = generate_rays(cam_b, px_b[inside])
    res = sc.trace(spec.primitives, spec.light, spec.background, o_b, d_b)

    unoccluded = res.depths >= expected_t[inside] - 1e-3
    assert unoccluded.mean() > 0.5  # the check must not be vacuous
    err = np.abs(res.depths[unoccluded] - expected_t[inside][unoccluded])
    assert err.max() < 1e-3


def test_invisible_primitive_warns_but_generates():
    # a sphere behind every rig camera triggers the visibility warning
    tiny = sc.Sphere(center=(0.0, 0.0, 0.0), radius=0.005,
                     texture=flat_texture())
    rig = sc.CameraRig(count=2, radius=3.0, elevation_range=(10.0, 20.0),
                       look_at=(0.9, 0.0, 0.0))
    spec = sc.SyntheticSpec(primitives=(tiny,), light=(0, 1, 0),
                            background=(0, 0, 0), rig=rig, image_size=17, seed=0)
    with pytest.warns(UserWarning, match="visible"):
        scene = sc.generate_scene(spec)
    assert len(scene.views) == 2


def test_spec_rejects_primitive_outside_unit_volume():
    big = sc.Sphere(center=(0.8, 0, 0), radius=0.5, texture=flat_texture())
    rig = sc.CameraRig(count=2, radius=3.0, elevation_range=(10.0, 20.0))
    with pytest.raises(sc.SceneError, match="unit"):
        sc.SyntheticSpec(primitives=(big,), light=(0, 1, 0),
                         background=(0, 0, 0), rig=rig, image_size=17, seed=0)


def test_scene_normalization_must_be_similarity():
    scene = sc.generate_scene(single_sphere_spec(size=17))
    shear = np.eye(4)
    shear[0, 1] = 0.3
    with pytest.raises(sc.SceneError, match="similarity"):
        sc.Scene(views=scene.views, normalization=shear)


# -- dataset directory round trip ------------------------------------------------


def test_save_load_scene_round_trip(tmp_path):
    scene = sc.generate_scene(sc.random_spec(4, image_size=33))
    out = tmp_path / "scene_000"
    sc.save_scene(scene, out)

    assert (out / "cameras.json").exists()
    assert (out / "images" / "000.png").exists()
    assert (out / "depth" / "000.mndf").exists()

    loaded = sc.load_scene(out)
    assert len(loaded.views) == len(scene.views)
    for va, vb in zip(scene.views, loaded.views):
        assert np.allclose(va.camera.intrinsics, vb.camera.intrinsics, atol=1e-6)
        assert np.allclose(va.camera.world_to_camera, vb.camera.world_to_camera,
                           atol=1e-6)
        assert va.camera.near == vb.camera.near
        assert va.camera.far == vb.camera.far
        # 8-bit quantization bounds the image error
        assert np.abs(va.image - vb.image).max() <= 0.5 / 255 + 1e-9
        assert np.allclose(va.depth.astype(np.float32), vb.depth, atol=1e-6)


def test_cameras_json_schema(tmp_path):
    scene = sc.generate_scene(single_sphere_spec(size=17))
    sc.save_scene(scene, tmp_path / "s")
    doc = json.loads((tmp_path / "s" / "cameras.json").read_text())
    assert set(doc) == {"near", "far", "views"}
    assert isinstance(doc["near"], float) and isinstance(doc["far"], float)
    v = doc["views"][0]
    assert set(v) == {"image", "intrinsics", "world_to_camera"}
    assert v["image"] == "images/000.png"
    assert np.asarray(v["intrinsics"]).shape == (3, 3)
    assert np.asarray(v["world_to_camera"]).shape == (4, 4)


def test_load_scene_missing_file(tmp_path):
    with pytest.raises(sc.SceneError, match="cameras.json"):
        sc.load_scene(tmp_path / "nope")


def test_load_scene_rejects_malformed_matrix(tmp_path):
    scene = sc.generate_scene(single_sphere_spec(size=17))
    sc.save_scene(scene, tmp_path / "s")
    path = tmp_path / "s" / "cameras.json"
    doc = json.loads(path.read_text())
    doc["views"][0]["intrinsics"] = [[1.0, 0.0], [0.0, 1.0]]
    path.write_text(json.dumps(doc))
    with pytest.raises(sc.SceneError, match="view 0"):
        sc.load_scene(tmp_path / "s")


def test_load_scene_rejects_non_rigid_extrinsics(tmp_path):
    scene = sc.generate_scene(single_sphere_spec(size=17))
    sc.save_scene(scene, tmp_path / "s")
    path = tmp_path / "s" / "cameras.json"
    doc = json.loads(path.read_text())
    w2c = np.asarray(doc["views"][0]["world_to_camera"])
    w2c[0, :3] *= 1.1  # row norm 1.1 breaks orthonormality
    doc["views"][0]["world_to_camera"] = w2c.tolist()
    path.write_text(json.dumps(doc))
    with pytest.raises(sc.SceneError, match="view 0"):
        sc.load_scene(tmp_path / "s")


def test_load_scene_without_depth(tmp_path):
    scene = sc.generate_scene(single_sphere_spec(size=17))
    for view in scene.views:
        view.depth = None
    sc.save_scene(scene, tmp_path / "s")
    assert not (tmp_path / "s" / "depth").exists()
    loaded = sc.load_scene(tmp_path / "s")
    assert all(v.depth is None for v in loaded.views)


def test_saved_depth_raster_is_mndf(tmp_path):
    scene = sc.generate_scene(single_sphere_spec(size=17))
    sc.save_scene(scene, tmp_path / "s")
    raster = load_depth_raster(tmp_path / "s" / "depth" / "001.mndf")
    assert np.allclose(raster, scene.views[1].depth.astype(np.float32))


# -- checkpoint serialization ----------------------------------------------------


def tiny_config():
    return ModelConfig(
        encoder=EncoderConfig(num_blocks=1, channels=16),
        decoder=DecoderConfig(mlp_layers=2, width=16, pe_frequencies=2),
        groups=(2, 8),
        num_views=2,
    )


def test_model_config_dict_round_trip():
    cfg = tiny_config()
    assert model_config_from_dict(model_config_to_dict(cfg)) == cfg


def test_checkpoint_round_trip_bit_exact(tmp_path):
    model = Model(tiny_config(), seed=3)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    sc.save_checkpoint(model, p1)
    loaded = sc.load_checkpoint(p1)
    assert loaded.config == model.config
    for name, arr in model.store.state_arrays().items():
        assert np.array_equal(arr, loaded.store.state_arrays()[name])
    sc.save_checkpoint(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_header_layout(tmp_path):
    model = Model(tiny_config(), seed=0)
    path = tmp_path / "m.ckpt"
    sc.save_checkpoint(model, path)
    header, arrays = sc.read_checkpoint(path)
    assert header["format_version"] == 1
    offsets = [e["offset"] for e in header["entries"].values()]
    sizes = [int(np.prod(e["shape"])) * 4 for e in header["entries"].values()]
    order = np.argsort(offsets)
    for k in range(len(order) - 1):
        i, j = order[k], order[k + 1]
        assert offsets[i] + sizes[i] <= offsets[j]  # nonoverlapping, ascending
    for e in header["entries"].values():
        assert e["dtype"] == "<f4"
    assert set(arrays) == set(model.store.state_arrays())


def test_empty_checkpoint(tmp_path):
    path = tmp_path / "empty.ckpt"
    sc.write_checkpoint(path, {}, config=None)
    header, arrays = sc.read_checkpoint(path)
    assert header["entries"] == {}
    assert arrays == {}
    # zero payload: the file is exactly the length prefix plus the header
    raw = path.read_bytes()
    header_len = int.from_bytes(raw[:4], "little")
    assert len(raw) == 4 + header_len


def test_checkpoint_detects_flipped_payload_byte(tmp_path):
    model = Model(tiny_config(), seed=1)
    path = tmp_path / "m.ckpt"
    sc.save_checkpoint(model, path)
    raw = bytearray(path.read_bytes())
    raw[-5] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(sc.CheckpointError, match="checksum"):
        sc.load_checkpoint(path)


def test_checkpoint_rejects_truncated_payload(tmp_path):
    model = Model(tiny_config(), seed=1)
    path = tmp_path / "m.ckpt"
    sc.save_checkpoint(model, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(sc.CheckpointError, match="payload"):
        sc.load_checkpoint(path)


def test_checkpoint_rejects_missing_entry(tmp_path):
    model = Model(tiny_config(), seed=1)
    arrays = model.store.state_arrays()
    dropped = sorted(arrays)[0]
    del arrays[dropped]
    path = tmp_path / "m.ckpt"
    sc.write_checkpoint(path, arrays, config=model_config_to_dict(model.config))
    with pytest.raises(sc.CheckpointError, match="mismatch"):
        sc.load_checkpoint(path)


def test_checkpoint_rejects_wrong_shape(tmp_path):
    model = Model(tiny_config(), seed=1)
    arrays = dict(model.store.state_arrays())
    name = sorted(arrays)[0]
    arrays[name] = np.zeros(arrays[name].size + 1, dtype=np.float32)
    path = tmp_path / "m.ckpt"
    sc.write_checkpoint(path, arrays, config=model_config_to_dict(model.config))
    with pytest.raises(sc.CheckpointError, match=name.split(".")[0]):
        sc.load_checkpoint(path)


def test_checkpoint_without_config_cannot_rebuild(tmp_path):
    path = tmp_path / "m.ckpt"
    sc.write_checkpoint(path, {"w": np.zeros(3, dtype=np.float32)}, config=None)
    with pytest.raises(sc.CheckpointError, match="config"):
        sc.load_checkpoint(path)


def test_checkpoint_crc_matches_zlib(tmp_path):
    arrays = {"w": np.arange(5, dtype=np.float32)}
    path = tmp_path / "w.ckpt"
    sc.write_checkpoint(path, arrays, config=None)
    header, _ = sc.read_checkpoint(path)
    assert header["entries"]["w"]["crc32"] == zlib.crc32(arrays["w"].tobytes())


# -- random spec plumbing ---------------------------------------------------------


def test_random_spec_is_deterministic_and_valid():
    a = sc.random_spec(21, image_size=33)
    b = sc.random_spec(21, image_size=33)
    assert a == b
    assert len(a.primitives) >= 2
    assert a.image_size == 33


def test_random_spec_varies_primitive_kinds():
    kinds = set()
    for seed in range(12):
        for prim in sc.random_spec(seed).primitives:
            kinds.add(type(prim).__name__)
    assert {"Sphere", "Box", "RectPlane"} <= kinds
