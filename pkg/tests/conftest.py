import numpy as np
import pytest

from swapcast.core import ForecastDistribution, PredictionGrid, Transcript, build_epsilon_net


def point_transcript(grid: PredictionGrid, preds, outcomes) -> Transcript:
    """Transcript of point-mass forecasts at the given free values."""
    tr = Transcript(grid, len(preds))
    for p, y in zip(preds, outcomes):
        p = grid.point(np.atleast_1d(p))
        idx = int(np.argmin(np.abs(grid.points - p).max(axis=1)))
        assert np.abs(grid.points[idx] - p).max() < 1e-12
        tr.append(ForecastDistribution.point_mass(grid.size, idx), idx, grid.point(np.atleast_1d(y)))
    return tr


def random_transcript(rng, grid: PredictionGrid, T: int, support: int = 3) -> Transcript:
    tr = Transcript(grid, T)
    for _ in range(T):
        w = np.zeros(grid.size)
        sup = rng.choice(grid.size, size=min(support, grid.size), replace=False)
        w[sup] = rng.random(sup.size) + 0.05
        w /= w.sum()
        idx = int(rng.choice(sup))
        y = grid.point(rng.random(grid.free_dims))
        tr.append(ForecastDistribution(w), idx, y)
    return tr


@pytest.fixture
def lifted3():
    return build_epsilon_net(2, 0.5, lifted=True)


def pytest_terminal_summary(terminalreporter):
    import sys
    lines = getattr(sys.modules.get("test_acceptance"), "LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
