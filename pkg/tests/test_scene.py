import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import random_scene, sh_basis_naive
from splatcolor import sh
from splatcolor.scene import (Camera, SceneBundle, SchemaError, SynthSpec, bundle_from_json,
                              bundle_to_json, load_scene, look_at, object_layout, save_scene,
                              synth_ring_scene)

coef = st.floats(-2.0, 2.0, allow_nan=False)


def unit_dir(rng):
    d = rng.normal(size=3)
    return d / np.linalg.norm(d)


# ------------------------------------------------------------------- SH

def test_degree0_value():
    assert sh.eval_sh([[0.25]], unit_dir(np.random.default_rng(0)))[0] == pytest.approx(0.5705, abs=1e-4)
    assert sh.eval_sh([[0.25]], [0, 0, 1])[0] == pytest.approx(0.25 * 0.2820948 + 0.5, abs=1e-6)


def test_degree0_isotropic(rng):
    assert sh.eval_sh([[0.7]], unit_dir(rng)) == sh.eval_sh([[0.7]], unit_dir(rng))


def test_y10_parity():
    c = np.zeros((1, 4))
    c[0, 2] = 0.3
    d = np.array([0.3, 0.4, np.sqrt(1 - 0.25)])
    up = sh.eval_sh(c, d)[0] - 0.5
    down = sh.eval_sh(c, d * [1, 1, -1])[0] - 0.5
    assert up == pytest.approx(-down, abs=1e-12)


@pytest.mark.parametrize("h", [1, 4, 9, 16])
def test_basis_matches_written_out_terms(h, rng):
    d = unit_dir(rng)
    assert np.allclose(sh.basis(d, h), sh_basis_naive(d, h), atol=1e-14)


def test_bad_h_and_direction():
    with pytest.raises(ValueError):
        sh.eval_sh(np.zeros((1, 5)), [0, 0, 1])
    with pytest.raises(ValueError):
        sh.eval_sh(np.zeros((1, 1)), [0, 0, 2])


@given(arrays(np.float64, (2, 9), elements=coef), arrays(np.float64, (2, 9), elements=coef),
       st.floats(-1, 1), st.floats(-1, 1))
def test_linear_before_clamp(F, G, a, b):
    d = np.array([0.48, -0.6, 0.64])
    raw = lambda c: c @ sh.basis(d, 9) + 0.5  # noqa: E731
    lhs, rf, rg = raw(a * F + b * G), raw(F), raw(G)
    if min(lhs.min(), rf.min(), rg.min()) <= 0:
        return
    assert np.allclose(sh.eval_sh(a * F + b * G, d),
                       a * sh.eval_sh(F, d) + b * sh.eval_sh(G, d) - (a + b - 1) * 0.5, atol=1e-9)


def test_value_to_dc_roundtrip():
    assert sh.eval_sh([[sh.value_to_dc(0.8)]], [1, 0, 0])[0] == pytest.approx(0.8, abs=1e-12)


# --------------------------------------------------------------- cameras

def test_camera_validation():
    with pytest.raises(SchemaError):
        Camera(0, -1.0, 1.0, 0, 0, 4, 4, np.eye(3), np.zeros(3))
    with pytest.raises(SchemaError):
        Camera(0, 1.0, 1.0, 0, 0, 4, 4, np.eye(3) * 1.01, np.zeros(3))


def test_look_at_points_forward():
    cam = look_at(0, (4, 0, 0), (0, 0, 0), 45, 32, 32)
    assert cam.to_camera(np.zeros((1, 3)))[0] == pytest.approx([0, 0, 4])
    assert cam.center == pytest.approx([4, 0, 0])


# ----------------------------------------------------------------- JSON

def _bundle(rng, n=100, h=4, color=True):
    scene = random_scene(rng, n, h, color)
    cams = [look_at(i, (3 * np.cos(i), 3 * np.sin(i), 0.5), (0, 0, 0), 50, 16, 12) for i in range(3)]
    return SceneBundle(scene, cams[:2], cams[2:])


def test_roundtrip_100_splats(tmp_path, rng):
    b = _bundle(rng)
    save_scene(b, tmp_path / "s.json")
    assert load_scene(tmp_path / "s.json") == b


def test_missing_fc_stays_absent(tmp_path, rng):
    b = _bundle(rng, color=False)
    save_scene(b, tmp_path / "s.json")
    assert load_scene(tmp_path / "s.json").scene.f_c is None


def test_stable_key_order(rng):
    doc = bundle_to_json(_bundle(rng, n=2))
    assert list(doc["splats"][0]) == ["x", "q", "s", "alpha", "f_y", "f_c"]
    assert list(doc["cameras"][0]) == ["id", "fx", "fy", "cx", "cy", "w", "h", "R", "t"]


def test_bad_opacity_names_field(rng):
    doc = bundle_to_json(_bundle(rng, n=5))
    doc["splats"][3]["alpha"] = 1.5
    with pytest.raises(SchemaError) as err:
        bundle_from_json(doc)
    assert err.value.path == "splats[3].opacity"


def test_non_unit_quaternion_rejected(rng):
    doc = bundle_to_json(_bundle(rng, n=5))
    doc["splats"][1]["q"] = [1.0, 0.1, 0.0, 0.0]
    with pytest.raises(SchemaError) as err:
        bundle_from_json(doc)
    assert err.value.path == "splats[1].q"


@pytest.mark.parametrize("mutate,path", [
    (lambda d: d["splats"][0].pop("x"), "splats[0].x"),
    (lambda d: d["splats"][0].__setitem__("s", [0.1, -0.1, 0.1]), "splats[0].s"),
    (lambda d: d["splats"][0].__setitem__("f_y", [0.0, 0.0]), "splats[0].f_y"),
    (lambda d: d["cameras"][0].__setitem__("fx", "big"), "cameras[0].fx"),
])
def test_schema_errors_have_paths(rng, mutate, path):
    doc = bundle_to_json(_bundle(rng, n=3))
    mutate(doc)
    with pytest.raises(SchemaError) as err:
        bundle_from_json(json.loads(json.dumps(doc)))
    assert err.value.path == path


def test_duplicate_camera_ids(rng):
    b = _bundle(rng, n=2)
    with pytest.raises(SchemaError):
        SceneBundle(b.scene, b.cameras, (b.cameras[0],))


# -------------------------------------------------------------- synthesis

SMALL = SynthSpec(n_objects=4, splats_per_object=50, n_cameras=24, width=32, height=32)


def test_synth_deterministic():
    assert synth_ring_scene(SMALL, 7) == synth_ring_scene(SMALL, 7)


def test_synth_seed_changes_positions():
    a, b = synth_ring_scene(SMALL, 7), synth_ring_scene(SMALL, 8)
    assert not np.array_equal(a.scene.positions, b.scene.positions)


def test_synth_clusters_within_radius():
    b = synth_ring_scene(SMALL, 7)
    centers, _ = object_layout(SMALL, 7)
    pos = b.scene.positions.reshape(SMALL.n_objects, SMALL.splats_per_object, 3)
    dist = np.linalg.norm(pos - centers[:, None, :], axis=2)
    assert dist.max() <= SMALL.cluster_radius


def test_synth_cameras_on_ring():
    b = synth_ring_scene(SMALL, 7)
    assert [c.id for c in b.cameras] == list(range(24))
    radii = [np.linalg.norm(c.center[:2]) for c in b.cameras]
    assert np.allclose(radii, SMALL.orbit_radius)
    assert b.scene.gt_colors is not None


def test_default_palette_distinct():
    spec = SynthSpec()
    assert len(set(spec.palette)) == spec.n_objects


@pytest.mark.parametrize("field", ["n_cameras", "n_objects"])
def test_synth_rejects_zero_counts(field):
    with pytest.raises(ValueError):
        synth_ring_scene(SynthSpec(**{field: 0}), 0)


def test_luminance_matches_gt_lightness():
    from splatcolor.imaging import rgb_array_to_lab
    sc = synth_ring_scene(SMALL, 1).scene
    rgb = sc.gt_colors[:, :, 0] * sh.C0 + 0.5
    assert np.allclose(sc.f_y[:, 0] * sh.C0 + 0.5, rgb_array_to_lab(rgb)[:, 0] / 100)
