import pytest

from sheathlab.model import PlasmaParams
from sheathlab.stationary import build_profile, default_grid

DEGENERATE_PHI_B = (0.04, 0.02, 0.01)


@pytest.fixture(scope="session")
def ref_params():
    return PlasmaParams()


@pytest.fixture(scope="session")
def ref_profile(ref_params):
    return build_profile(ref_params)


@pytest.fixture(scope="session")
def degenerate_profiles():
    out = {}
    for phi_b in DEGENERATE_PHI_B:
        p = PlasmaParams.degenerate(phi_b=phi_b)
        out[phi_b] = build_profile(p, default_grid(p, 2048))
    return out
