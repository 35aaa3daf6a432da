import numpy as np
import pytest

from nodefdm import data, performance as perf, synthetic


def make_flight(seed: int = 0, noise: bool = True, cfg=None, **kw) -> data.FlightSeries:
    """A feasible synthetic flight drawn from ``seed``."""
    cfg = cfg or perf.PerformanceConfig()
    rng = np.random.default_rng([11, seed])
    for _ in range(20):
        try:
            return synthetic.generate_flight(cfg, synthetic.sample_script(rng, noise=noise),
                                             tag=f"flight_{seed}", **kw)
        except synthetic.GenerationError:
            continue
    raise RuntimeError("no feasible script")


def level_flight(n: int = 120, alt: float = 10000.0, tas: float = 230.0,
                 mass: float = 60000.0, tag: str = "level") -> data.FlightSeries:
    """Hand-built straight-and-level record sequence (no physics, only schema)."""
    t = data.DT * np.arange(n)
    z = np.zeros(n)
    cols = {
        "time_s": t, "alt": alt + z, "dist": tas * t, "fpa": z, "tas": tas + z,
        "mass": mass - 0.5 * t, "sel_alt": alt + z, "sel_spd": 130.0 + z, "sel_vs": z,
        "flap": z, "gear": z, "spdbrk": z, "oat": 223.15 + z, "wind_par": z, "wind_perp": z,
        "mach": 0.77 + z, "cas": 130.0 + z, "vs": z, "gs": tas + z, "aoa": 0.04 + z,
        "pitch": 0.04 + z, "n1": 85.0 + z, "fuel_flow": 0.5 + z,
    }
    return data.FlightSeries(tag, cols)


@pytest.fixture(scope="session")
def flight():
    return make_flight(0)


@pytest.fixture(scope="session")
def flights():
    return [make_flight(i) for i in range(10)]


@pytest.fixture(scope="session")
def norm_stats(flights):
    return data.compute_norm_stats(flights)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("dataset")
    return synthetic.generate_dataset(out, {"train": 10, "val": 2, "test": 2}, seed=7)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""
    def record(name: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
