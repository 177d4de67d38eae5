import pytest

from endowsale import ModelParams, build_surface


@pytest.fixture(scope="session")
def thresh_R05():
    """Threshold-sale surface, R < 1 reference parameter set."""
    return build_surface(ModelParams.from_normalized(1, 2, 0.1, 0.5))


@pytest.fixture(scope="session")
def thresh_R2():
    """Threshold-sale surface, R > 1 reference parameter set."""
    return build_surface(ModelParams.from_normalized(6, 2, 0.1, 2.0))


@pytest.fixture(scope="session")
def cash_R05():
    """Cash-first surface, R < 1 reference parameter set."""
    return build_surface(ModelParams.from_normalized(1, 1, 0.1, 0.5))


@pytest.fixture(scope="session")
def cash_R2():
    """Cash-first surface, R > 1 reference parameter set."""
    return build_surface(ModelParams.from_normalized(3, 1, 0.1, 2.0))


@pytest.fixture(scope="session")
def sell_now():
    """Depreciating-asset surface (liquidate at time zero)."""
    return build_surface(ModelParams.from_normalized(-0.5, 1, 0.1, 0.5))
