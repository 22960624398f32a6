import numpy as np
import pytest

from vpfp.state import coeff_shape, make_grid, symmetrize


def random_coeffs(dim, K, M, rng, decay=0.0, scale=1.0):
    """Hermitian, neutral random coefficients; ``decay`` tapers high |k| and |m|."""
    grid = make_grid(dim, K, M)
    shape = coeff_shape(dim, K, M)
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    if decay:
        c = c * grid.kb((1.0 + np.sqrt(grid.ksq)) ** -decay) * (1.0 + grid.levels) ** -decay
    c = scale * symmetrize(c)
    c[grid.origin + (0,) * dim] = 0.0
    return c


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number, title, passed, detail=""):
        line = f"criterion {number:>2} {title}: {'PASS' if passed else 'FAIL'}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
