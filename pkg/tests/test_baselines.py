import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorafield.baselines import (LayerInputStats, chambolle_denoise,
                                 collect_layer_inputs, functional_error,
                                 lowrank_error_curve, read_error_curve,
                                 small_mlp_arch, svd_baseline,
                                 weighted_svd_baseline, write_error_curve)
from lorafield.errors import ShapeError
from lorafield.field import (FieldArchitecture, FieldWeights, count_params,
                             forward, init_base)
from lorafield.linalg import SeededRng
from lorafield.metrics import discrete_tv
from lorafield.samplers import RasterImage

ARCH = FieldArchitecture(2, 2, 12, 1, 3)


def _pair(seed=0, scale=0.1):
    rng = SeededRng(seed)
    base = init_base(ARCH, rng)
    ft = base.copy()
    for w in ft.weights:
        w += scale * rng.normal(w.shape)
    for b in ft.biases:
        b += scale * rng.normal(b.shape)
    return base, ft


def _probe(n=500, seed=3):
    return 2 * SeededRng(seed).uniform((n, 2)) - 1


def test_collect_layer_inputs_shapes():
    base, _ = _pair()
    stats = collect_layer_inputs(base, ARCH, _probe())
    assert [x.shape for x in stats.inputs] == [(8, 500), (12, 500), (12, 500)]
    for i in range(len(stats)):
        assert np.min(np.linalg.eigvalsh(stats.gram(i))) >= -1e-10
        assert np.allclose(stats.gram(i), stats.gram(i).T, atol=1e-10)


def test_constant_probe_gives_rank_one_gram():
    base, _ = _pair()
    stats = collect_layer_inputs(base, ARCH, np.tile([[0.3, -0.2]], (50, 1)))
    for i in range(len(stats)):
        assert np.linalg.matrix_rank(stats.gram(i), tol=1e-10) <= 1


def test_svd_baseline_full_rank_reproduces_finetuned():
    base, ft = _pair()
    out = svd_baseline(base, ft, 64)
    x = _probe()
    assert np.max(np.abs(forward(ARCH, out, x) - forward(ARCH, ft, x))) < 1e-8


def test_svd_baseline_identical_networks():
    base, _ = _pair()
    out = svd_baseline(base, base.copy(), 2)
    assert all(np.array_equal(a, b) for a, b in zip(out.params(), base.params()))


def test_svd_baseline_truncation_error_identity():
    base, ft = _pair()
    out = svd_baseline(base, ft, 2)
    for w0, w1, wr in zip(base.weights, ft.weights, out.weights):
        sig = np.linalg.svd(w1 - w0, compute_uv=False)
        assert np.linalg.norm(w1 - wr) == pytest.approx(np.sqrt(np.sum(sig[2:] ** 2)), abs=1e-10)


def test_baselines_are_pure():
    base, ft = _pair()
    before = [p.copy() for p in base.params()]
    stats = collect_layer_inputs(base, ARCH, _probe())
    svd_baseline(base, ft, 2)
    weighted_svd_baseline(base, ft, 2, stats)
    assert all(np.array_equal(a, b) for a, b in zip(before, base.params()))


def test_shape_mismatch():
    base, ft = _pair()
    other = init_base(ARCH.with_width(5), SeededRng(0))
    with pytest.raises(ShapeError):
        svd_baseline(base, other, 2)


def test_weighted_identity_gram_equals_plain():
    base, ft = _pair()
    # inputs with C = I exactly: sqrt(n) * identity columns
    stats = LayerInputStats([np.sqrt(d) * np.eye(d) for d, _ in ARCH.layer_dims()])
    for i in range(len(stats)):
        assert np.allclose(stats.gram(i), np.eye(stats.inputs[i].shape[0]))
    a = weighted_svd_baseline(base, ft, 3, stats)
    b = svd_baseline(base, ft, 3)
    for wa, wb in zip(a.weights, b.weights):
        assert np.max(np.abs(wa - wb)) < 1e-8


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_weighted_dominates_plain(seed, r):
    rng = SeededRng(seed)
    delta = rng.normal((7, 9))
    x = rng.normal((9, 40)) * np.linspace(0.05, 3.0, 9)[:, None]  # anisotropic inputs
    stats = LayerInputStats([x])
    w0 = FieldWeights([np.zeros((7, 9))], [np.zeros(7)])
    w1 = FieldWeights([delta], [np.zeros(7)])
    weighted = weighted_svd_baseline(w0, w1, r, stats).weights[0]
    plain = svd_baseline(w0, w1, r).weights[0]
    assert np.linalg.matrix_rank(weighted, tol=1e-9) <= r
    assert functional_error(delta, weighted, x) <= functional_error(delta, plain, x) + 1e-9


def test_weighted_rank_deficient_stats_finite():
    base, ft = _pair()
    stats = collect_layer_inputs(base, ARCH, np.tile([[0.3, -0.2]], (20, 1)))
    out = weighted_svd_baseline(base, ft, 2, stats)
    assert all(np.all(np.isfinite(p)) for p in out.params())


def test_weighted_zero_stats_falls_back():
    base, ft = _pair()
    stats = LayerInputStats([np.zeros((d, 5)) for d, _ in ARCH.layer_dims()])
    with pytest.warns(RuntimeWarning, match="plain SVD"):
        out = weighted_svd_baseline(base, ft, 2, stats)
    plain = svd_baseline(base, ft, 2)
    assert all(np.array_equal(a, b) for a, b in zip(out.params(), plain.params()))


def test_error_curve_properties(tmp_path):
    base, ft = _pair()
    stats = collect_layer_inputs(base, ARCH, _probe())
    ranks = list(range(1, 13))
    rows = lowrank_error_curve(base, ft, stats, ranks)
    assert len(rows) == len(ranks) * ARCH.num_layers
    for layer, (d_in, d_out) in enumerate(ARCH.layer_dims()):
        errs = [e for l, r, e in rows if l == layer]
        assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
        assert errs[min(d_in, d_out) - 1] < 1e-10
    path = tmp_path / "curve.csv"
    write_error_curve(path, rows)
    assert path.read_text().splitlines()[0] == "layer,rank,normalized_error"
    assert read_error_curve(path) == rows


def test_error_curve_rank_three_fixture():
    rng = SeededRng(4)
    delta = rng.normal((10, 3)) @ rng.normal((3, 8))
    w0 = FieldWeights([np.zeros((10, 8))], [np.zeros(10)])
    w1 = FieldWeights([delta], [np.zeros(10)])
    stats = LayerInputStats([rng.normal((8, 100))])
    errs = [e for _, _, e in lowrank_error_curve(w0, w1, stats, [1, 2, 3, 4])]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-12 and errs[3] < 1e-12


def test_error_curve_zero_update():
    base, _ = _pair()
    stats = collect_layer_inputs(base, ARCH, _probe())
    assert all(e == 0.0 for *_, e in lowrank_error_curve(base, base, stats, [1, 2]))
    with pytest.raises(ValueError):
        lowrank_error_curve(base, base, stats, [])


def _width_sweep(arch, target):
    counts = {w: count_params(arch.with_width(w)) for w in range(1, arch.hidden_width + 1)}
    best = min(abs(c - target) for c in counts.values())
    return counts, best


def test_small_mlp_full_target():
    image = FieldArchitecture.preset("image")
    assert small_mlp_arch(count_params(image), image).hidden_width == 256


def test_small_mlp_matches_exhaustive_sweep():
    image = FieldArchitecture.preset("image")
    got = small_mlp_arch(46_473, image)
    counts, best = _width_sweep(image, 46_473)
    assert abs(counts[got.hidden_width] - 46_473) == best
    assert got.hidden_layers == image.hidden_layers and got.encoding_levels == image.encoding_levels


def test_small_mlp_monotone():
    image = FieldArchitecture.preset("image")
    widths = [small_mlp_arch(t, image).hidden_width for t in range(200, 340_000, 9_000)]
    assert widths == sorted(widths)
    with pytest.raises(ValueError):
        small_mlp_arch(10, image)


def test_chambolle_constant_image():
    img = RasterImage(np.full((8, 9, 3), 0.4))
    assert np.allclose(chambolle_denoise(img, 0.1).pixels, 0.4, atol=1e-14)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 0.5))
def test_chambolle_reduces_tv(seed, lam):
    img = RasterImage(SeededRng(seed).uniform((10, 12, 3)))
    out = chambolle_denoise(img, lam, iterations=100)
    assert discrete_tv(out) <= discrete_tv(img) + 1e-12


def test_chambolle_small_lambda_limit():
    img = RasterImage(SeededRng(0).uniform((16, 16, 3)))
    assert np.max(np.abs(chambolle_denoise(img, 1e-6).pixels - img.pixels)) < 1e-3


def test_chambolle_channel_permutation():
    img = RasterImage(SeededRng(1).uniform((12, 10, 3)))
    perm = [2, 0, 1]
    a = chambolle_denoise(RasterImage(img.pixels[..., perm]), 0.1).pixels
    b = chambolle_denoise(img, 0.1).pixels[..., perm]
    assert np.array_equal(a, b)


def test_chambolle_validation():
    img = RasterImage(np.zeros((2, 2, 1)))
    with pytest.raises(ValueError):
        chambolle_denoise(img, 0.1, iterations=0)
    with pytest.raises(ValueError):
        chambolle_denoise(img, 0.1, tau=0.3)


def test_chambolle_single_row_and_pixel():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = chambolle_denoise(RasterImage(SeededRng(2).uniform((1, 7, 1))), 0.1)
        assert out.pixels.shape == (1, 7, 1)
        one = chambolle_denoise(RasterImage(np.full((1, 1, 1), 0.3)), 0.1)
        assert one.pixels[0, 0, 0] == pytest.approx(0.3)
