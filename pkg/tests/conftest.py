import numpy as np
import pytest

from risloc.channel import default_scenario, draw_codebook
from risloc.estimator import build_steering_model
from risloc.geometry import build_composite_ris


@pytest.fixture(scope="session")
def layout():
    return build_composite_ris()


@pytest.fixture(scope="session")
def scenario():
    return default_scenario()


@pytest.fixture(scope="session")
def model(layout, scenario):
    codebook = draw_codebook(layout.num_cells, scenario.num_samples,
                             scenario.reflection_set, seed=7)
    return build_steering_model(layout, codebook, scenario)


def toy_layout(num_cells=5, seed=0, spacing=0.05):
    """Small random layout in the yz-plane for brute-force comparisons."""
    from risloc.geometry import RisLayout
    rng = np.random.default_rng(seed)
    cells = np.zeros((num_cells, 3))
    cells[:, 1:] = rng.uniform(-0.15, 0.15, size=(num_cells, 2))
    return RisLayout(cell_centers=cells, min_spacing=1e-6)
