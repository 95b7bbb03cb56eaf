import numpy as np
import pytest

from lorafield.field import FieldArchitecture, init_adapters, init_base
from lorafield.linalg import SeededRng


def finite_difference(loss_fn, params, h=1e-5):
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``params``."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


@pytest.fixture
def small_field():
    """A width-8 field with trained-looking (nonzero) adapters."""
    arch = FieldArchitecture(2, 2, 8, 1, 3)
    rng = SeededRng(17)
    weights = init_base(arch, rng)
    for b in weights.biases:
        b[:] = rng.normal(b.shape, std=0.1)
    adapters = init_adapters(arch, 3, rng)
    for b in adapters.b:
        b[:] = rng.normal(b.shape, std=0.3)
    return arch, weights, adapters


# --------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion
# --------------------------------------------------------------------------

_criteria: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        name = report.nodeid.split("::test_criterion_")[1]
        detail = dict(report.user_properties).get("detail", "")
        _criteria[name] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria):
        verdict, detail = _criteria[name]
        number, _, label = name.partition("_")
        line = f"{verdict} criterion {int(number):2d} ({label.replace('_', ' ')})"
        terminalreporter.write_line(line + (f": {detail}" if detail else ""))
