import math

import numpy as np
import pytest

from lorafield.errors import ShapeError
from lorafield.linalg import SeededRng
from lorafield.metrics import (MetricRow, discrete_tv, iou, mse, psnr,
                               read_report, render_image, write_report)
from lorafield.samplers import Box, Sphere


def test_psnr_examples():
    a = np.zeros((4, 4, 3))
    assert psnr(a, a) == math.inf
    assert psnr(a, np.full((4, 4, 3), 0.1)) == pytest.approx(20.0)
    assert psnr(a, np.full((4, 4, 3), 1.0)) == pytest.approx(0.0)


def test_mse_shape_mismatch():
    with pytest.raises(ShapeError):
        mse(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


def test_discrete_tv():
    assert discrete_tv(np.full((5, 5, 3), 0.7)) == 0.0
    step = np.zeros((4, 6, 1))
    step[:, 3:] = 1.0
    assert discrete_tv(step) == pytest.approx(4.0)


def test_iou_concentric_spheres():
    v = iou(Sphere(0.4), Sphere(0.5), 1_000_000, SeededRng(2024))
    assert abs(v - 0.512) <= 0.01


def test_iou_identity_and_disjoint():
    s = Sphere(0.3)
    assert iou(s, s, 20_000, SeededRng(1)) == 1.0
    far = iou(Sphere(0.2, (-0.6, 0, 0)), Sphere(0.2, (0.6, 0, 0)), 20_000, SeededRng(1))
    assert far == 0.0


def test_iou_empty_solids():
    outside = lambda p: np.ones(len(p))  # noqa: E731
    assert iou(outside, outside, 1000, SeededRng(0)) == 1.0


def test_iou_symmetric_and_chunk_invariant():
    a, b = Box((0.4, 0.3, 0.2)), Sphere(0.35, (0.1, 0, 0))
    ab = iou(a, b, 50_000, SeededRng(7), chunk=50_000)
    ba = iou(b, a, 50_000, SeededRng(7), chunk=7_000)
    assert ab == ba


def test_render_is_clamped_and_shaped():
    img = render_image(lambda x: np.tile(x[:, :1] * 3, (1, 3)), 6, 5)
    assert img.pixels.shape == (6, 5, 3)
    assert img.pixels.min() == 0.0 and img.pixels.max() == 1.0


def test_report_roundtrip(tmp_path):
    rows = [MetricRow("e", "lora", 16, 46473, "psnr", 31.25, 3, 1.5),
            MetricRow("e", "ft", None, 340227, "psnr", math.inf, 3, 2.0)]
    path = tmp_path / "r.csv"
    write_report(path, rows)
    write_report(path, rows[:1], append=True)
    back = read_report(path)
    assert back == rows + rows[:1]
    assert path.read_text().splitlines()[0] == "experiment,method,rank,param_count,metric,value,seed,seconds"
