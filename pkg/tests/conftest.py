import json
import math
from pathlib import Path

import numpy as np
import pytest

from rectlab import geometry

DATA = Path(__file__).parent / "data"


class FrozenStore:
    """Suite constants: measured once, recorded with margin, then regression-checked.

    The first run of a sweep records value * margin into
    ``tests/data/frozen_constants.json``; every later run asserts the measured
    value stays at or below the recorded one.
    """

    def __init__(self, path: Path):
        self.path = path
        self.data = {}
        if path.exists():
            with open(path) as fh:
                self.data = json.load(fh)

    def check(self, name: str, value: float, *, margin: float = 1.3,
              floor: float = 1e-9) -> float:
        assert math.isfinite(value), f"{name} measured non-finite: {value}"
        if name not in self.data:
            self.data[name] = max(value * margin, floor)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w") as fh:
                json.dump(self.data, fh, indent=1, sort_keys=True)
        frozen = self.data[name]
        assert value <= frozen, (
            f"regression: {name} = {value:.6g} exceeds frozen {frozen:.6g}")
        return frozen


@pytest.fixture(scope="session")
def frozen():
    return FrozenStore(DATA / "frozen_constants.json")


@pytest.fixture(scope="session")
def plane_cloud():
    return geometry.gen_plane(2, 3, 0.1, 1.0)


@pytest.fixture(scope="session")
def segment_cloud():
    return geometry.gen_plane(1, 2, 1 / 64, 1.0)


@pytest.fixture(scope="session")
def sin_graph():
    """Graph of a small oscillation, the workhorse curved fixture."""
    return geometry.gen_lipschitz_graph(
        lambda x: 0.1 * math.sin(float(x[0]) / 0.1), 1.1, 0.025, 1.0)


@pytest.fixture(scope="session")
def sin_curve():
    """One-dimensional curved graph in the plane."""
    return geometry.gen_lipschitz_graph(
        lambda x: 0.1 * math.sin(float(x[0]) / 0.1), 1.1, 1 / 64, 1.0, d=1)


@pytest.fixture(scope="session")
def tiny_square():
    return geometry.WeightedCloud(
        [[0, 0], [1, 0], [0, 1], [1, 1]], [1, 1, 1, 1], 1, resolution=1.0)
