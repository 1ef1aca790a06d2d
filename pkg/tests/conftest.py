import numpy as np
import pytest

from hdivmhd.fespace import build_spaces
from hdivmhd.mesh import build_faces, generate_structured_cube

REF_TET = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def cube1():
    return generate_structured_cube(1)


@pytest.fixture(scope="session")
def cube2():
    return generate_structured_cube(2)


@pytest.fixture(scope="session")
def ref_tet_mesh():
    return build_faces(REF_TET.copy(), np.array([[0, 1, 2, 3]]))


@pytest.fixture(scope="session")
def spaces2_k1(cube2):
    return build_spaces(cube2, 1)


@pytest.fixture(scope="session")
def spaces2_k2(cube2):
    return build_spaces(cube2, 2)


@pytest.fixture(scope="session", params=[1, 2], ids=["k1", "k2"])
def spaces2(request, spaces2_k1, spaces2_k2):
    return spaces2_k1 if request.param == 1 else spaces2_k2


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """report(label, ok, detail) records one PASS/FAIL line and returns ok."""
    def report(label: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} {label}: {detail}")
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
