import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from defog2refog import data, fogmodel, metrics as M
from oracles import gradient_bruteforce

unit = st.floats(0.0, 1.0, allow_nan=False)


def test_constant_image_has_no_edges():
    assert not M.visible_edges(np.full((8, 8), 0.4)).any()


def test_step_edge_is_visible_along_the_step():
    g = np.zeros((6, 10))
    g[:, 5:] = 1.0
    vis = M.visible_edges(g)
    assert vis[:, 4:6].all()
    assert not vis[:, :4].any() and not vis[:, 6:].any()


def test_gradient_matches_bruteforce(rng):
    g = rng.random((9, 11))
    np.testing.assert_allclose(M.gradient_magnitude(g), gradient_bruteforce(g), rtol=0, atol=1e-15)


def test_identity_restoration(rng):
    x = rng.random((16, 16, 3))
    r = M.bave_indicators(x, x)
    assert (r.e, r.r_bar, r.delta) == (0.0, 1.0, 0.0)


def test_contrast_stretch_doubles_gradient_ratio():
    yy, xx = np.mgrid[0:32, 0:32]
    gray = 0.5 + 0.15 * np.sin(xx / 2.0) * np.cos(yy / 3.0)
    before = np.repeat(gray[..., None], 3, axis=2)
    after = 0.5 + 2.0 * (before - 0.5)
    assert after.min() > 0 and after.max() < 1
    assert M.bave_indicators(before, after).r_bar == pytest.approx(2.0, abs=0.05)


def test_all_white_after_delta():
    before = np.full((4, 5, 3), 0.5)
    before[0, :] = 1.0  # already saturated: 5 of 20 pixels
    r = M.bave_indicators(before, np.ones_like(before))
    assert r.delta == pytest.approx(15 / 20)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        M.bave_indicators(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_new_edges_counted():
    before = np.full((10, 10, 3), 0.5)
    after = before.copy()
    after[:, 5:] = 0.9
    r = M.bave_indicators(before, after)
    assert r.e == 20.0  # 20 new edge pixels over max(0, 1)
    assert r.r_bar > 1


@given(st.integers(0, 2**32 - 1))
def test_delta_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    before = rng.uniform(-0.2, 1.2, (8, 8, 3))
    after = rng.uniform(-0.2, 1.2, (8, 8, 3))
    assert 0.0 <= M.bave_indicators(before, after).delta <= 1.0


@given(st.integers(0, 2**32 - 1), st.floats(0.6, 1.6))
def test_swap_inverts_r_bar(seed, k):
    rng = np.random.default_rng(seed)
    blocks = rng.choice([0.3, 0.5, 0.7], size=(4, 4))
    gray = np.kron(blocks, np.ones((4, 4)))
    before = np.repeat(gray[..., None], 3, axis=2)
    after = 0.5 + k * (before - 0.5)
    assert np.array_equal(M.visible_edges(M.to_gray(before)), M.visible_edges(M.to_gray(after)))
    forward = M.bave_indicators(before, after).r_bar
    backward = M.bave_indicators(after, before).r_bar
    assert abs(backward - 1.0 / forward) < 1e-9


def test_fog_proxy_extremes():
    assert M.fog_density_proxy(np.ones((20, 20, 3))) == 1.0
    assert M.fog_density_proxy(np.zeros((20, 20, 3))) == 0.0


def test_fog_proxy_rises_with_fog_on_toy_scenes():
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(100):
        j = data.toy_clear_image(rng, 32)
        foggy = fogmodel.synthesize_fog(j, np.full((32, 32), 0.3), [1.0, 1.0, 1.0])
        hits += M.fog_density_proxy(foggy) > M.fog_density_proxy(j)
    assert hits >= 95


@given(arrays(np.float64, (6, 6, 3), elements=unit), st.floats(fogmodel.T_MIN, 1.0), st.data())
def test_fog_proxy_monotone(j, t, data_):
    a = np.maximum(j.reshape(-1, 3).max(axis=0), data_.draw(arrays(np.float64, (3,), elements=unit)))
    foggy = fogmodel.synthesize_fog(j, np.full((6, 6), t), a)
    assert M.fog_density_proxy(foggy, patch=3) >= M.fog_density_proxy(j, patch=3) - 1e-12


def test_luminance_weight_examples(rng):
    gray = np.repeat(rng.random((5, 5, 1)), 3, axis=2)
    assert not M.luminance_weight_map(gray).any()
    img = np.full((3, 3, 3), 0.5)
    img[1, 1] = [1.0, 0.0, 0.0]
    w = M.luminance_weight_map(img)
    assert w[1, 1] == 1.0 and w.sum() == 1.0


def test_luminance_weight_matches_bruteforce(rng):
    img = rng.random((7, 6, 3))
    raw = np.empty((7, 6))
    for i in range(7):
        for j in range(6):
            p = [float(v) for v in img[i, j]]
            mu = sum(p) / 3
            raw[i, j] = math.sqrt(sum((v - mu) ** 2 for v in p) / 3)
    np.testing.assert_allclose(M.luminance_weight_map(img), raw / raw.max(), rtol=1e-12)
