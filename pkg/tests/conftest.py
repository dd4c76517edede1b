import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from iosim.circuit import CircuitParams, CouplingTable, PinDiodeModel
from iosim.defaults import DEFAULT_DIODE, REF_PLANE, TABLE_RLC

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

GRID = tuple(np.linspace(3.0e9, 4.2e9, 13))


def make_params(ys1=0.02 - 0.08j, ys2=0.3 - 5.0j, diode=DEFAULT_DIODE, d=0.0, freqs=GRID, **scalars):
    rlc = dict(TABLE_RLC)
    rlc.update(scalars)
    return CircuitParams(**rlc, ys1=CouplingTable.constant(ys1, freqs), ys2=CouplingTable.constant(ys2, freqs),
                         d1=d, d2=d, diode=diode)


@pytest.fixture
def params():
    return make_params()


@pytest.fixture
def paper_like():
    return make_params(d=REF_PLANE)


@pytest.fixture
def ideal_diode():
    return PinDiodeModel(r_on=1.0, l_on=0.0, l_off=0.0, c_off=1e-12, r_off=float("inf"))


def random_channels(seed, M=4, K=2, J=2, delta_scale=0.6, noise=0.1):
    """Gaussian grouped channel with unit RF gains."""
    from iosim.channel import ChannelSet

    rng = np.random.default_rng(seed)
    cn = lambda *shape: (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / np.sqrt(2)  # noqa: E731
    return ChannelSet(cn(K, J), delta_scale * cn(M, K, J), np.ones(J), noise)


def random_geometric_channels(seed, interference="physical"):
    """16x10 surface in four 8x5 blocks, two fixed BS antennas and two UEs at random spots."""
    from iosim.array import Antenna, ArrayLayout, GroupConfiguration
    from iosim.channel import LinkBudget, group_deltas
    from iosim.defaults import default_table

    rng = np.random.default_rng(seed)
    lay = ArrayLayout(16, 10, 2.87e-2, 1.42e-2)
    grp = GroupConfiguration.by_blocks(lay, 8, 5)
    tx = [Antenna((-0.5, 0.9, 0.1), 12.5), Antenna((-0.9, 0.5, 0.1), 12.5)]
    rx = []
    for _ in range(2):
        az = rng.uniform(-170, 170)
        if abs(az) < 10 or abs(abs(az) - 180) < 10:
            az += 20
        r, z = rng.uniform(0.5, 1.5), rng.uniform(-0.3, 0.3)
        rx.append(Antenna((r * np.sin(np.radians(az)), r * np.cos(np.radians(az)), z), 3.0))
    return group_deltas(lay, grp, default_table(), LinkBudget(interference=interference), tx, rx)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
