import numpy as np
import pytest
from conftest import finite_difference, max_relative_error
from hypothesis import given, settings
from hypothesis import strategies as st

from lorafield.errors import ShapeError, StateError
from lorafield.field import (AdapterSet, FieldArchitecture, FieldNet, FieldWeights,
                             adapter_param_count, count_params, forward,
                             frequency_encode, init_adapters, init_base,
                             merge_adapters)
from lorafield.linalg import SeededRng, svd

SDF = FieldArchitecture.preset("sdf")
IMAGE = FieldArchitecture.preset("image")


def test_encoding_examples():
    assert np.allclose(frequency_encode([0.0], 2), [0, 1, 0, 1])
    out = frequency_encode([np.pi / 2], 1)
    assert out[0] == pytest.approx(1.0) and abs(out[1]) < 1e-15
    assert frequency_encode(np.zeros(3), 6).shape == (36,)


def test_encoding_order_level_major():
    x = np.array([0.3, -0.7])
    e = frequency_encode(x, 2)
    expect = [np.sin(0.3), np.cos(0.3), np.sin(-0.7), np.cos(-0.7),
              np.sin(0.6), np.cos(0.6), np.sin(-1.4), np.cos(-1.4)]
    assert np.allclose(e, expect, atol=0, rtol=1e-15)


def test_architecture_layout():
    assert SDF.encoded_dim == 36
    assert SDF.num_layers == 6
    assert IMAGE.layer_dims()[0] == (40, 256)
    assert IMAGE.layer_dims()[-1] == (256, 3)


@pytest.mark.parametrize("rank,count", [(1, 2597), (4, 9617), (8, 18977), (16, 37697),
                                        (32, 75137), (64, 141841)])
def test_sdf_adapter_counts(rank, count):
    assert adapter_param_count(SDF, rank) == count
    assert count_params(init_adapters(SDF, rank, SeededRng(0))) == count


def test_full_counts():
    assert count_params(SDF) == 272_897
    assert count_params(IMAGE) == 340_227
    assert count_params(init_base(SDF, SeededRng(0))) == 272_897


def test_image_output_layer_rank_capped():
    ad = init_adapters(IMAGE, 64, SeededRng(0))
    assert ad.effective_ranks[-1] == 3
    assert ad.effective_ranks[0] == 40
    assert count_params(ad) == adapter_param_count(IMAGE, 64)


def test_identity_network():
    arch = FieldArchitecture(3, 0, 3, 0, 3)
    w = FieldWeights([np.eye(3), np.eye(3)], [np.zeros(3), np.zeros(3)])
    x = np.array([[0.1, 0.5, 0.9], [0.0, 0.2, 1.0]])  # nonnegative, so ReLU passes through
    assert np.array_equal(forward(arch, w, x), x)


def test_fresh_adapters_are_noop():
    rng = SeededRng(3)
    w = init_base(IMAGE, rng)
    ad = init_adapters(IMAGE, 16, rng)
    x = 2 * rng.uniform((200, 2)) - 1
    assert np.array_equal(forward(IMAGE, w, x), forward(IMAGE, w, x, ad))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(1, 3))
def test_fresh_adapters_noop_property(seed, rank, hidden):
    arch = FieldArchitecture(2, 3, 10, hidden, 2)
    rng = SeededRng(seed)
    w = init_base(arch, rng)
    ad = init_adapters(arch, rank, rng)
    x = 2 * rng.uniform((50, 2)) - 1
    assert forward(arch, w, x).tobytes() == forward(arch, w, x, ad).tobytes()


def test_merge_matches_attached(small_field):
    arch, w, ad = small_field
    x = 2 * SeededRng(1).uniform((1000, 2)) - 1
    attached = forward(arch, w, x, ad)
    merged = forward(arch, merge_adapters(w, ad), x)
    assert np.max(np.abs(attached - merged) / (1 + np.abs(attached))) <= 1e-10


def test_merge_zero_adapters_unchanged():
    rng = SeededRng(2)
    w = init_base(SDF, rng)
    m = merge_adapters(w, init_adapters(SDF, 4, rng))
    assert all(np.array_equal(a, b) for a, b in zip(w.params(), m.params()))


def test_merge_twice_is_additive(small_field):
    arch, w, ad = small_field
    twice = merge_adapters(merge_adapters(w, ad), ad)
    for i, wi in enumerate(w.weights):
        assert np.allclose(twice.weights[i], wi + 2 * ad.delta(i), atol=1e-14)
        assert not np.allclose(twice.weights[i], merge_adapters(w, ad).weights[i])


def test_merge_shape_error(small_field):
    arch, w, ad = small_field
    bad = AdapterSet(ad.a[:-1], ad.b[:-1], ad.rank)
    with pytest.raises(ShapeError):
        merge_adapters(w, bad)


def test_forward_shape_error():
    w = init_base(SDF, SeededRng(0))
    with pytest.raises(ShapeError):
        FieldNet(IMAGE, w)


def test_init_base_statistics_and_determinism():
    w1 = init_base(SDF, SeededRng(8))
    w2 = init_base(SDF, SeededRng(8))
    assert all(np.array_equal(a, b) for a, b in zip(w1.params(), w2.params()))
    assert abs(w1.weights[1].var() / (2 / 256) - 1) < 0.1
    assert all(np.all(b == 0) for b in w1.biases)


def test_init_adapter_statistics():
    ad = init_adapters(SDF, 64, SeededRng(4))
    assert abs(ad.a[1].var() * 256 - 1) < 0.1
    assert all(np.all(b == 0) for b in ad.b)


def test_unmerged_two_step_equals_merged():
    rng = SeededRng(12)
    d_in, d_out, r = 9, 7, 4
    w = rng.normal((d_out, d_in))
    a, b = rng.normal((r, d_in)), rng.normal((d_out, r))
    x = rng.normal(d_in)
    two_step = w @ x + b @ (a @ x) / r
    merged = (w + b @ a / r) @ x
    assert np.max(np.abs(two_step - merged)) <= 1e-10 * np.max(np.abs(merged))


def _loss(net, x, upstream):
    return float(np.sum(net(x) * upstream))


@pytest.mark.parametrize("seed", range(5))
def test_full_gradients_match_finite_differences(seed):
    rng = SeededRng(100 + seed)
    arch = FieldArchitecture(2, 1 + seed % 3, 4 + 3 * seed % 13, 1 + seed % 2, 1 + seed % 3)
    w = init_base(arch, rng)
    for b in w.biases:
        b[:] = rng.normal(b.shape, std=0.1)
    net = FieldNet(arch, w)
    x = 2 * rng.uniform((6, 2)) - 1
    up = rng.normal((6, arch.output_dim))
    net.forward(x)
    grads = net.backward(up, "full")
    numeric = finite_difference(lambda: _loss(net, x, up), w.params())
    assert max_relative_error(grads.params(), numeric) < 1e-4


def test_adapter_gradients_match_finite_differences(small_field):
    arch, w, ad = small_field
    net = FieldNet(arch, w, ad)
    rng = SeededRng(5)
    x = 2 * rng.uniform((5, 2)) - 1
    up = rng.normal((5, 3))
    net.forward(x)
    grads = net.backward(up, "adapters_only")
    numeric = finite_difference(lambda: _loss(net, x, up), ad.params())
    assert max_relative_error(grads.params(), numeric) < 1e-4
    # base weights with adapters attached
    net.forward(x)
    full = net.backward(up, "full")
    numeric = finite_difference(lambda: _loss(net, x, up), w.params())
    assert max_relative_error(full.params(), numeric) < 1e-4


def test_zero_upstream_gives_zero_gradients(small_field):
    arch, w, ad = small_field
    net = FieldNet(arch, w, ad)
    net.forward(np.zeros((3, 2)))
    g = net.backward(np.zeros((3, 3)), "adapters_only")
    assert all(np.all(p == 0) for p in g.params())


def test_fresh_adapter_gradient_pattern():
    arch = FieldArchitecture(2, 2, 8, 1, 2)
    rng = SeededRng(21)
    w = init_base(arch, rng)
    net = FieldNet(arch, w, init_adapters(arch, 2, rng))
    net.forward(2 * rng.uniform((10, 2)) - 1)
    g = net.backward(rng.normal((10, 2)), "adapters_only")
    assert all(np.all(a == 0) for a in g.a)
    assert any(np.any(b != 0) for b in g.b)


def test_backward_requires_forward(small_field):
    arch, w, ad = small_field
    with pytest.raises(StateError):
        FieldNet(arch, w, ad).backward(np.zeros((1, 3)))


def test_trained_update_rank_bound(small_field):
    arch, w, ad = small_field
    for i, r in enumerate(ad.effective_ranks):
        sig = svd(ad.delta(i)).sigma
        if len(sig) > r:
            assert sig[r] < 1e-10 * sig[0]
