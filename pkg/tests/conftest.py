import pytest

from mrhomog.femcore.problem import DimensionlessParams
from mrhomog.twoscale import StudyConfig, convergence_study

# hydro2d sweep shared by the two-scale and acceptance tests
HYDRO_SWEEP = dict(dim=2, shape="disk", radius=0.25, cell_h=0.125, epsilons=(0.25, 0.125, 0.0625),
                   macro_h=1.0 / 32, params=DimensionlessParams(Re=1.0), g="swirl", h=None)


@pytest.fixture(scope="session")
def hydro_sweep():
    return convergence_study(StudyConfig(**HYDRO_SWEEP))


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record and assert one acceptance criterion: verdict(n, ok, detail)."""
    def record(n, ok, detail=""):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        request.config.acceptance_lines.append(line)
        assert ok, line
    return record
