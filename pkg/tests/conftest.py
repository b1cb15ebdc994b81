import pytest

from grslab import build_product, build_round_sphere, quadrature_grid

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def s2():
    return build_round_sphere(2)


@pytest.fixture(scope="session")
def s3():
    return build_round_sphere(3)


@pytest.fixture(scope="session")
def s2xs2():
    return build_product(build_round_sphere(2), build_round_sphere(2))


@pytest.fixture(scope="session")
def s2_grid(s2):
    return quadrature_grid(s2, "16x32")


@pytest.fixture(scope="session")
def s3_grid(s3):
    return quadrature_grid(s3, "8x10")


@pytest.fixture(scope="session")
def s2xs2_grid(s2xs2):
    return quadrature_grid(s2xs2, "6x8")


@pytest.fixture(scope="session")
def problems():
    """StabilityProblem cache keyed by (model name, degree)."""
    from grslab.stability_analysis import StabilityProblem

    cache = {}

    def get(model, degree):
        key = (model.name, degree)
        if key not in cache:
            cache[key] = StabilityProblem(model, degree)
        return cache[key]

    return get


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
