from pathlib import Path

import numpy as np
import pytest

from rocodec import (
    DoGParams,
    Image,
    build_analysis_operator,
    grid_spec,
    read_pgm,
)

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def params():
    return DoGParams()


@pytest.fixture(scope="session")
def op33(params):
    grid = grid_spec(33, None, params)
    return build_analysis_operator(grid, params)


@pytest.fixture(scope="session")
def op17(params):
    grid = grid_spec(17, None, params)
    return build_analysis_operator(grid, params)


def load_image(name: str) -> Image:
    return Image.from_array(read_pgm(DATA_DIR / name).astype(np.float64))


@pytest.fixture(scope="session")
def camera33():
    return load_image("camera_33.pgm")


@pytest.fixture(scope="session")
def corpus33():
    return {
        name: load_image(f"{name}_33.pgm") for name in ("camera", "coins", "moon")
    }


@pytest.fixture()
def rng():
    return np.random.default_rng(0xC0DEC)
