import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from splatcolor import colorize as col
from splatcolor import rasterizer as rz
from splatcolor.imaging import (Layout, PlanarImage, lab_array_to_rgb, rgb_array_to_lab,
                                to_grayscale, write_image)
from splatcolor.scene import SynthSpec, synth_ring_scene

SPEC = SynthSpec(n_objects=4, splats_per_object=20, n_cameras=8, n_test_cameras=2, width=24, height=24)


@pytest.fixture(scope="module")
def bundle():
    return synth_ring_scene(SPEC, 5)


@pytest.fixture(scope="module")
def grays(bundle):
    return [rz.render_luminance(bundle.scene, c) for c in bundle.cameras]


def lab_image(lab):
    return PlanarImage(np.clip(lab_array_to_rgb(np.asarray(lab, float)), 0, 1), Layout.RGB3)


def flat_lab(L, a, b, shape=(6, 6)):
    return lab_image(np.broadcast_to([L, a, b], shape + (3,)))


def gray_of(L, shape=(6, 6)):
    return PlanarImage(np.full(shape + (1,), L / 100.0), Layout.LUMINANCE1)


# ------------------------------------------------------------------ oracle

def test_oracle_is_gt_render(bundle, grays):
    oracle = col.oracle_colorizer(bundle)
    ref = rz.render_color(bundle.scene.with_gt_as_color(), bundle.camera(2))
    assert oracle(grays[2], 2) == ref
    assert oracle(grays[2], [], 2) == oracle(grays[2], 2)


def test_oracle_needs_gt(bundle):
    with pytest.raises(col.ColorizerError):
        col.oracle_colorizer(type(bundle)(bundle.scene.replace(gt_colors=None), bundle.cameras))


def test_colorizer_rejects_rgb_input(bundle):
    with pytest.raises(col.ColorizerError):
        col.oracle_colorizer(bundle)(PlanarImage(np.zeros((24, 24, 3)), Layout.RGB3), 0)


# ----------------------------------------------------------------- hue bias

def test_hue_bias_zero_is_identity(bundle, grays):
    oracle = col.oracle_colorizer(bundle)
    assert col.hue_bias_colorizer(oracle, 0.0)(grays[1], 1) == oracle(grays[1], 1)


def test_rotate_chroma_keeps_magnitude(rng):
    lab = np.stack([rng.uniform(0, 100, 50), rng.uniform(-60, 60, 50), rng.uniform(-60, 60, 50)], -1)
    out = col.rotate_chroma(lab, 0.8)
    assert np.allclose(np.hypot(out[:, 1], out[:, 2]), np.hypot(lab[:, 1], lab[:, 2]), atol=1e-6)
    assert np.array_equal(out[:, 0], lab[:, 0])


def test_hue_bias_differs_between_views(bundle, grays):
    biased = col.hue_bias_colorizer(col.oracle_colorizer(bundle), 0.6)
    assert col.view_hash(0) != col.view_hash(1)
    assert -1 <= col.view_hash(3) <= 1
    a = col.mean_chroma(biased(grays[0], 0))
    b = col.mean_chroma(biased(grays[0], 1))
    assert np.abs(a - b).max() > 0.1


# --------------------------------------------------------------------- LUT

def test_lut_neutral_references_give_gray():
    refs = [flat_lab(30, 0, 0), flat_lab(70, 0, 0)]
    out = col.lut_reference_colorizer(16)(gray_of(50), refs)
    lab = rgb_array_to_lab(out.data)
    assert np.abs(lab[..., 1:]).max() < 0.05


def test_lut_two_region_table():
    ref = np.concatenate([np.broadcast_to([25, 40, 0], (4, 6, 3)), np.broadcast_to([75, 0, 40], (4, 6, 3))])
    phi = col.lut_reference_colorizer(64)
    for L, ab in ((25, (40, 0)), (75, (0, 40))):
        lab = rgb_array_to_lab(phi(gray_of(L), [lab_image(ref)]).data)
        assert lab[0, 0, 1:] == pytest.approx(ab, abs=0.5)
        assert lab[0, 0, 0] == pytest.approx(L, abs=0.05)


def test_chroma_table_fills_empty_bins_from_nearest():
    ref = lab_image(np.broadcast_to([5, 30, 0], (2, 2, 3)))
    table = col.chroma_table([ref], 10)
    assert np.allclose(table, table[0])


@given(st.permutations(range(4)))
def test_lut_reference_order_irrelevant(perm):
    refs = [flat_lab(20 + 15 * i, 10 * i - 15, 5 - 3 * i) for i in range(4)]
    phi = col.lut_reference_colorizer(8)
    gray = PlanarImage(np.linspace(0, 1, 36).reshape(6, 6, 1), Layout.LUMINANCE1)
    a = phi(gray, refs).data
    b = phi(gray, [refs[i] for i in perm]).data
    assert np.allclose(a, b, atol=1e-12)


def test_lut_needs_references():
    with pytest.raises(col.ColorizerError):
        col.lut_reference_colorizer()(gray_of(50), [])


def test_lut_ignores_view_id():
    refs = [flat_lab(40, 20, 10)]
    phi = col.lut_reference_colorizer()
    assert phi(gray_of(40), refs, 3) == phi(gray_of(40), refs, 11)


# ------------------------------------------------------------- calibration

def test_calibration_single_view_identity():
    view = flat_lab(50, 20, 0)
    assert col.global_calibrate(col.lut_reference_colorizer(), [view], [0]) == [view]


def test_calibration_two_views_pull_together():
    v0, v1 = flat_lab(50, 20, 0), flat_lab(50, -20, 0)
    out = col.global_calibrate(col.lut_reference_colorizer(), [v0, v1], [0, 1])
    a0, a1 = (rgb_array_to_lab(v.data)[0, 0, 1] for v in out)
    # each view averages with the other's colors in RGB, so both land near neutral
    assert abs(a0) < 2 and abs(a1) < 2
    assert a0 == pytest.approx(a1, abs=1e-9)


def test_calibration_contracts_spread(bundle, grays):
    biased = col.hue_bias_colorizer(col.oracle_colorizer(bundle), 0.8)
    ids = [0, 2, 4, 6]
    initial = col.initial_base_colorize(biased, [grays[t] for t in ids], ids)
    calibrated = col.global_calibrate(col.lut_reference_colorizer(), initial, ids)
    assert col.chroma_spread(calibrated) < col.chroma_spread(initial)


def test_calibration_zero_passes_is_identity(bundle, grays):
    oracle = col.oracle_colorizer(bundle)
    initial = col.initial_base_colorize(oracle, grays[:3], [0, 1, 2])
    assert col.global_calibrate(col.lut_reference_colorizer(), initial, [0, 1, 2], passes=0) == initial


def test_calibration_keeps_lightness_structure(bundle, grays):
    oracle = col.oracle_colorizer(bundle)
    ids = [0, 3, 5]
    initial = col.initial_base_colorize(oracle, [grays[t] for t in ids], ids)
    calibrated = col.global_calibrate(col.lut_reference_colorizer(), initial, ids)
    for before, after in zip(initial, calibrated):
        diff = np.abs(to_grayscale(after).data - to_grayscale(before).data)
        assert diff.mean() <= 0.05


# ------------------------------------------------------------- propagation

def test_propagation_order_irrelevant(bundle, grays):
    oracle = col.oracle_colorizer(bundle)
    refs = col.initial_base_colorize(oracle, [grays[0], grays[4]], [0, 4])
    phi = col.lut_reference_colorizer()
    forward = col.propagate(phi, grays, list(range(8)), refs)
    backward = col.propagate(phi, grays[::-1], list(range(8))[::-1], refs[::-1])
    assert all(a == b for a, b in zip(forward, backward[::-1]))


def test_propagation_preserves_luminance(bundle, grays):
    refs = col.initial_base_colorize(col.oracle_colorizer(bundle), [grays[1]], [1])
    out = col.propagate(col.lut_reference_colorizer(), grays, list(range(8)), refs)
    for g, o in zip(grays, out):
        assert np.abs(to_grayscale(o).data - g.data).mean() <= 0.05


def test_propagation_needs_references(grays):
    with pytest.raises(ValueError):
        col.propagate(col.lut_reference_colorizer(), grays, list(range(8)), [])


# ------------------------------------------------------------ external/spec

def test_external_colorizer(tmp_path, rng):
    img = PlanarImage(rng.uniform(0, 1, (6, 6, 3)), Layout.RGB3)
    write_image(img, tmp_path / "view_4.png")
    ext = col.ExternalColorizer(tmp_path)
    out = ext(gray_of(50), 4)
    assert np.abs(out.data - img.data).max() <= 1 / 510 + 1e-12
    with pytest.raises(col.ColorizerError):
        ext(gray_of(50), 5)
    with pytest.raises(col.ColorizerError):
        ext(gray_of(50, (5, 5)), 4)
    with pytest.raises(col.ColorizerError):
        col.ExternalColorizer(tmp_path / "missing")


def test_parse_colorizer(bundle, tmp_path):
    assert isinstance(col.parse_colorizer("oracle", bundle), col.OracleColorizer)
    assert col.parse_colorizer("hue_bias(0.5)", bundle).strength == 0.5
    assert col.parse_colorizer("lut(32)", role="reference").bins == 32
    assert col.parse_colorizer("lut", role="reference").bins == 64
    assert isinstance(col.parse_colorizer(f"external({tmp_path})"), col.ExternalColorizer)


@pytest.mark.parametrize("spec,role", [("magic", "single"), ("lut(8)", "single"),
                                       ("hue_bias(0.2)", "reference"), ("external()", "single"),
                                       ("oracle(", "single")])
def test_parse_colorizer_errors(bundle, spec, role):
    with pytest.raises(ValueError):
        col.parse_colorizer(spec, bundle, role)


def test_chroma_spread_zero_for_identical():
    v = flat_lab(50, 10, -10)
    assert col.chroma_spread([v, v, v]) == 0.0
