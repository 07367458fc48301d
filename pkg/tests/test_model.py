import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_layout
from pdnnet.autodiff import Tensor, grad_check, mul, total
from pdnnet.graph import build_graph, tile_grid
from pdnnet.model import (
    VARIANTS,
    ModelConfig,
    cnn_forward,
    forward,
    fuse,
    gnn_embed,
    gnn_readout,
    init_params,
    neighbor_influence_block,
    param_count,
    predict,
    prepare_inputs,
    rasterize_to_canvas,
    voltage_drop_block,
)


def mlp_params(rng, name, n_in, d, n_out=None):
    n_out = d if n_out is None else n_out
    return {
        f"{name}.0.w": Tensor(rng.standard_normal((n_in, d))),
        f"{name}.0.b": Tensor(rng.standard_normal(d) * 0.1),
        f"{name}.1.w": Tensor(rng.standard_normal((d, n_out))),
        f"{name}.1.b": Tensor(rng.standard_normal(n_out) * 0.1),
    }


def ref_mlp(x, p, name):
    h = np.maximum(x @ p[f"{name}.0.w"].data + p[f"{name}.0.b"].data, 0)
    return h @ p[f"{name}.1.w"].data + p[f"{name}.1.b"].data


def random_edges(rng, n, e):
    src, dst = rng.integers(0, n, e), rng.integers(0, n, e)
    keep = src != dst
    return src[keep], dst[keep]


def bidirect(src, dst):
    pairs = sorted({(int(a), int(b)) for a, b in zip(src, dst)} | {(int(b), int(a)) for a, b in zip(src, dst)})
    arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def sample_graph(seed, n_w=4, n_h=4, t_sim=4):
    rng = np.random.default_rng(seed)
    lay = random_layout(rng, n_w, n_h, t_sim=t_sim)
    return build_graph(tile_grid(lay, 1.0, 1.0), lay)


def test_embed_zero_weights():
    p = {k: Tensor(np.zeros_like(v.data)) for k, v in mlp_params(np.random.default_rng(0), "b0.embed", 3, 4).items()}
    out = gnn_embed(np.ones((5, 3)), p)
    np.testing.assert_array_equal(out.data, 0.0)


def test_embed_matches_direct_mlp_and_is_row_local():
    rng = np.random.default_rng(1)
    p = mlp_params(rng, "b0.embed", 3, 4)
    x = rng.standard_normal((6, 3))
    base = gnn_embed(x, p).data
    np.testing.assert_allclose(base[2], ref_mlp(x[2], p, "b0.embed"), rtol=1e-12)
    x2 = x.copy()
    x2[4] += 1.0
    changed = np.any(gnn_embed(x2, p).data != base, axis=1)
    assert changed.tolist() == [False, False, False, False, True, False]


def test_embed_channel_mismatch():
    p = mlp_params(np.random.default_rng(0), "b0.embed", 3, 4)
    with pytest.raises(ValueError):
        gnn_embed(np.ones((2, 5)), p)


def test_vd_block_single_edge():
    rng = np.random.default_rng(2)
    p = mlp_params(rng, "vd", 4, 2)
    h = rng.standard_normal((2, 2))
    out = voltage_drop_block(Tensor(h), np.array([0]), np.array([1]), p, "vd").data
    np.testing.assert_allclose(out[0], ref_mlp(np.r_[h[0], 0, 0], p, "vd"), rtol=1e-12)
    np.testing.assert_allclose(out[1], ref_mlp(np.r_[h[1], h[0]], p, "vd"), rtol=1e-12)


def test_ni_isolated_node_sees_zero_neighbour():
    rng = np.random.default_rng(3)
    p = mlp_params(rng, "ni", 4, 2)
    h = rng.standard_normal((3, 2))
    out = neighbor_influence_block(Tensor(h), np.array([0, 1]), np.array([1, 0]), p, "ni").data
    np.testing.assert_allclose(out[2], ref_mlp(np.r_[h[2], 0, 0], p, "ni"), rtol=1e-12)
    np.testing.assert_allclose(out[1], ref_mlp(np.r_[h[1], h[0]], p, "ni"), rtol=1e-12)


def test_ni_mean_aggregation():
    rng = np.random.default_rng(4)
    p = mlp_params(rng, "ni", 4, 2)
    h = rng.standard_normal((3, 2))
    src, dst = bidirect(np.array([0, 0]), np.array([1, 2]))
    out = neighbor_influence_block(Tensor(h), src, dst, p, "ni").data
    expect = (ref_mlp(np.r_[h[0], h[1]], p, "ni") + ref_mlp(np.r_[h[0], h[2]], p, "ni")) / 2
    np.testing.assert_allclose(out[0], expect, rtol=1e-12)


def test_ni_symmetric_pair():
    rng = np.random.default_rng(5)
    p = mlp_params(rng, "ni", 6, 3)
    h = np.tile(rng.standard_normal(3), (2, 1))
    out = neighbor_influence_block(Tensor(h), np.array([0, 1]), np.array([1, 0]), p, "ni").data
    np.testing.assert_array_equal(out[0], out[1])


def test_ni_rejects_directed_edges():
    p = mlp_params(np.random.default_rng(0), "ni", 4, 2)
    with pytest.raises(ValueError):
        neighbor_influence_block(Tensor(np.ones((2, 2))), np.array([0]), np.array([1]), p, "ni")


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 12), e=st.integers(0, 40))
def test_blocks_equivariant_to_relabeling(seed, n, e):
    rng = np.random.default_rng(seed)
    d = 3
    p = {**mlp_params(rng, "vd", 2 * d, d), **mlp_params(rng, "ni", 2 * d, d)}
    h = rng.standard_normal((n, d))
    src, dst = random_edges(rng, n, e)
    bsrc, bdst = bidirect(src, dst)
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    # node k of the relabeled graph is old node perm[k]
    hp = h[perm]
    vd = voltage_drop_block(Tensor(h), src, dst, p, "vd").data
    vd_p = voltage_drop_block(Tensor(hp), inv[src], inv[dst], p, "vd").data
    np.testing.assert_allclose(vd_p, vd[perm], rtol=0, atol=1e-12)
    ni = neighbor_influence_block(Tensor(h), bsrc, bdst, p, "ni").data
    ni_p = neighbor_influence_block(Tensor(hp), inv[bsrc], inv[bdst], p, "ni").data
    np.testing.assert_allclose(ni_p, ni[perm], rtol=0, atol=1e-12)


def test_edge_reversal_changes_vd_output():
    rng = np.random.default_rng(6)
    p = mlp_params(rng, "vd", 4, 2)
    h = np.array([[1.0, 0.0], [0.0, 2.0], [0.5, -1.0]])
    src, dst = np.array([0, 1]), np.array([1, 2])
    fwd = voltage_drop_block(Tensor(h), src, dst, p, "vd").data
    rev = voltage_drop_block(Tensor(h), dst, src, p, "vd").data
    assert np.abs(fwd - rev).max() > 1e-6


def test_readout_range_and_zero_weights():
    rng = np.random.default_rng(7)
    p = mlp_params(rng, "b0.readout", 4, 4, 1)
    out = gnn_readout(Tensor(rng.standard_normal((20, 4))), p).data
    assert out.shape == (20, 1) and np.all(np.abs(out) < 1)
    zero = {k: Tensor(np.zeros_like(v.data)) for k, v in p.items()}
    np.testing.assert_array_equal(gnn_readout(Tensor(np.ones((3, 4))), zero).data, 0.0)


def test_rasterize_examples():
    f = np.arange(8.0).reshape(4, 2)
    canvas = rasterize_to_canvas(f, 2, 2, 4, 4)
    assert canvas.shape == (4, 4, 2, 1)
    np.testing.assert_array_equal(canvas[:2, :2, 0, 0], 0.0)
    np.testing.assert_array_equal(canvas[2:, 2:, 1, 0], 7.0)
    same = rasterize_to_canvas(np.arange(16.0).reshape(16, 1), 4, 4, 4, 4)
    np.testing.assert_array_equal(same[..., 0, 0], np.arange(16.0).reshape(4, 4))
    const = rasterize_to_canvas(np.full((6, 3), 2.5), 2, 3, 8, 8)
    np.testing.assert_array_equal(const, 2.5)


def tiny_cnn_config():
    return ModelConfig(c_in=4, h_f=8, w_f=8, cnn_levels=3, cnn_channels=(2, 2, 2), variant="cnn_single")


def test_cnn_shape_and_zero_output():
    cfg = tiny_cnn_config()
    params = init_params(cfg, 0)
    for t in (1, 3, 4, 7):
        out = cnn_forward(np.ones((8, 8, t, 1)), params, "b0", 3)
        assert out.shape == (8, 8, 1)
    zero = {k: Tensor(np.zeros_like(v.data)) if k.endswith(".b") else v for k, v in params.items()}
    np.testing.assert_array_equal(cnn_forward(np.zeros((8, 8, 4, 1)), zero, "b0", 3).data, 0.0)


def test_cnn_rejects_indivisible_canvas():
    params = init_params(tiny_cnn_config(), 0)
    with pytest.raises(ValueError):
        cnn_forward(np.ones((12, 8, 4, 1)), params, "b0", 3)


def test_cnn_end_to_end_grad_check():
    cfg = tiny_cnn_config()
    params = init_params(cfg, 1)
    rng = np.random.default_rng(1)
    for k, v in params.items():
        if k.endswith(".b"):
            v.data[:] = rng.uniform(0.05, 0.3, v.shape)
    canvas = Tensor(rng.uniform(0, 1, (8, 8, 4, 1)))
    probe = Tensor(rng.standard_normal((8, 8, 1)))
    assert grad_check(lambda t: total(mul(cnn_forward(t, params, "b0", 3), probe)), canvas) < 1e-4
    w = params["b0.enc1.0.w"]
    f = lambda _: total(mul(cnn_forward(canvas, params, "b0", 3), probe))  # noqa: E731
    assert grad_check(f, w, indices=np.arange(0, w.data.size, 3)) < 1e-4


def test_fuse_projection_selects_gnn_channel():
    rng = np.random.default_rng(8)
    y_gnn = Tensor(rng.uniform(0.1, 1, (6, 1)))
    y_cnn = Tensor(rng.standard_normal((8, 8, 1)))
    p = {
        "fuse.0.w": Tensor(np.array([[1.0], [0.0]])),
        "fuse.0.b": Tensor(np.zeros(1)),
        "fuse.1.w": Tensor(np.ones((1, 1))),
        "fuse.1.b": Tensor(np.zeros(1)),
    }
    out = fuse([y_gnn, y_cnn], 2, 3, p).data
    np.testing.assert_array_equal(out, y_gnn.data.reshape(2, 3))
    one = fuse([Tensor(np.array([[0.5]])), Tensor(np.ones((8, 8, 1)))], 1, 1, p).data
    assert one.shape == (1, 1) and one[0, 0] == 0.5


def test_fuse_node_ordering():
    # identity fusion on a single CNN channel recovers the resampled map row-major
    p = {
        "fuse.0.w": Tensor(np.ones((1, 1))),
        "fuse.0.b": Tensor(np.full(1, 10.0)),
        "fuse.1.w": Tensor(np.ones((1, 1))),
        "fuse.1.b": Tensor(np.full(1, -10.0)),
    }
    grid = np.arange(12.0).reshape(3, 4, 1)
    out = fuse([Tensor(grid)], 3, 4, p).data
    np.testing.assert_allclose(out, grid[..., 0], rtol=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
def test_variants_share_output_shape(variant):
    g = sample_graph(9, n_w=5, n_h=3)
    cfg = ModelConfig(c_in=g.features.shape[1], d_hidden=4, h_f=8, w_f=8, cnn_channels=(2, 2, 2), variant=variant)
    out = predict(g, init_params(cfg, 0), cfg)
    assert out.shape == (3, 5) and np.all(np.isfinite(out))


def test_forward_deterministic():
    g = sample_graph(10)
    cfg = ModelConfig(c_in=7, d_hidden=8, h_f=8, w_f=8, cnn_channels=(2, 2, 2))
    params = init_params(cfg, 3)
    assert np.array_equal(predict(g, params, cfg), predict(g, params, cfg))
    assert np.array_equal(
        init_params(cfg, 3)["b0.embed.0.w"].data, init_params(cfg, 3)["b0.embed.0.w"].data
    )


def test_desk_config_param_count_and_mismatch():
    cfg = ModelConfig(c_in=7)
    assert param_count(init_params(cfg)) > 0
    with pytest.raises(ValueError):
        prepare_inputs(sample_graph(0, t_sim=2), cfg)
    with pytest.raises(ValueError):
        ModelConfig(c_in=7, h_f=12)
    with pytest.raises(ValueError):
        ModelConfig(c_in=7, variant="transformer")


def test_full_model_grad_check_desk_config():
    g = sample_graph(11)
    cfg = ModelConfig(c_in=7)
    params = init_params(cfg, 5)
    rng = np.random.default_rng(5)
    # random biases move every ReLU away from its kink, so central differences are smooth
    for k, v in params.items():
        if k.endswith(".b"):
            v.data[:] = rng.uniform(-0.3, 0.3, v.shape)
    inputs = prepare_inputs(g, cfg)
    probe = Tensor(rng.standard_normal((4, 4)))

    def f(_):
        return total(mul(forward(inputs, params, cfg), probe))

    worst = 0.0
    for name in ("b0.embed.0.w", "b0.vd0.0.w", "b0.ni3.1.w", "b0.readout.1.b", "b1.enc0.0.w", "b1.dec2.up.w",
                 "b1.head.w", "fuse.0.w"):
        w = params[name]
        idx = rng.choice(w.data.size, min(6, w.data.size), replace=False)
        worst = max(worst, grad_check(f, w, indices=idx))
    assert worst < 1e-3
