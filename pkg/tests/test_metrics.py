import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from xidlens.coalesce import coalesce
from xidlens.errors import ConfigError, DataInconsistencyError, UnsortedInputError
from xidlens.metrics import (AvailabilityInput, availability, count_errors, fleet_hazard, infer_consecutive_sbe,
                             infer_uncorrectable, mtbe, mtbe_from_per_node, nelson_aalen, with_inferred)
from xidlens.records import FleetConfig

from oracles import rec

A100 = FleetConfig("a100", 106, 448, 40, 21480)
H100 = FleetConfig("h100", 152, 608, 96, 3504)


def test_count_errors_filters_excluded_and_range():
    events = [rec(0, xid=13, category="hardware"), rec(10, xid=48), rec(100, xid=48, gpu="b"),
              rec(200, xid=119, category="hardware")]
    co = coalesce(events)
    assert count_errors(co) == {"119/120": 1, "48": 2}
    assert count_errors(co, include_excluded=True)["13"] == 1
    assert count_errors(co, time_range=(10, 200)) == {"48": 2}
    assert count_errors(co, time_range=(None, 100)) == {"48": 1}
    assert count_errors([]) == {}


def test_inferred_counts():
    assert infer_uncorrectable(34, 0) == 34 and infer_consecutive_sbe(34, 1) == 33
    assert infer_uncorrectable(16, 8) == 24 and infer_consecutive_sbe(24, 17) == 7
    assert infer_uncorrectable(0, 0) == 0 and infer_consecutive_sbe(5, 5) == 0
    with pytest.raises(DataInconsistencyError, match="6.*5"):
        infer_consecutive_sbe(5, 6)


def test_with_inferred_skips_inconsistent_row():
    assert with_inferred({"63": 16, "64": 8, "48": 17})["consecutive-SBE"] == 7
    out = with_inferred({"63": 1, "48": 3})
    assert out["uncorrectable-ECC"] == 1 and "consecutive-SBE" not in out


def test_mtbe_granularities():
    m = mtbe(10, H100, "x")
    assert m.mtbe_system == 350.4
    assert m.mtbe_per_node == pytest.approx(350.4 * 152)
    assert m.mtbe_per_gpu == pytest.approx(m.mtbe_per_node * 4)
    assert m.mtbe_per_gb / m.mtbe_per_gpu == pytest.approx(96)
    empty = mtbe(0, H100)
    assert empty.mtbe_system is None and empty.mtbe_per_gb is None


def test_mtbe_rejects_bad_input():
    with pytest.raises(ValueError):
        mtbe(-1, H100)
    with pytest.raises(ConfigError):
        FleetConfig("x", 1, 1, 1, 0)


def test_published_normalization():
    h = mtbe_from_per_node(22192, H100)
    assert h.mtbe_per_gb == 8_521_728
    a = mtbe_from_per_node(66967, A100)
    assert a.mtbe_per_gpu == pytest.approx(283_271, rel=5e-3)
    assert a.mtbe_per_gb == pytest.approx(11_330_826, rel=5e-3)
    assert 3.1 <= a.mtbe_per_gpu / h.mtbe_per_gpu <= 3.3


@given(st.integers(1, 10**6), st.integers(1, 500), st.integers(1, 8), st.integers(1, 200))
def test_granularity_chain(count, nodes, per_node, gb):
    fleet = FleetConfig("f", nodes, nodes * per_node, gb, 1000.0)
    m = mtbe(count, fleet)
    assert m.mtbe_per_node / m.mtbe_system == pytest.approx(nodes)
    assert m.mtbe_per_gb / m.mtbe_per_gpu == pytest.approx(gb)


def test_nelson_aalen_hand_cases():
    h = nelson_aalen([10.0], 1)
    assert h(9.99) == 0 and h(10) == 1
    h = nelson_aalen([2, 5], [3, 2])
    assert Fraction(h(2)).limit_denominator(100) == Fraction(1, 3)
    assert h(5) == float(Fraction(5, 6))
    assert h(0) == 0 and h.increments == pytest.approx([1 / 3, 1 / 2])


def test_nelson_aalen_ties_and_callable():
    h = nelson_aalen([1, 1, 3], lambda t: 10 - t)
    assert h.events == [0, 2, 1]
    assert h(1) == pytest.approx(2 / 9) and h(3) == pytest.approx(2 / 9 + 1 / 7)


def test_nelson_aalen_errors():
    with pytest.raises(DataInconsistencyError):
        nelson_aalen([1, 2], [1, 0])
    with pytest.raises(UnsortedInputError):
        nelson_aalen([2, 1], 5)
    with pytest.raises(ValueError):
        nelson_aalen([1, 2], [3])


@given(st.lists(st.floats(0, 1000, allow_nan=False), max_size=50).map(sorted), st.integers(1, 100))
def test_nelson_aalen_monotone(times, n):
    h = nelson_aalen(times, n)
    assert all(b >= a for a, b in zip(h.cumulative, h.cumulative[1:]))
    assert h.cumulative[0] == 0


def _poisson_times(rng, rate, horizon):
    n = rng.poisson(rate * horizon)
    return np.sort(rng.uniform(0, horizon, n)).tolist()


@pytest.mark.parametrize("units,hours,tol", [
    (100, 100.0, 3 / math.sqrt(100)),    # 1e4 unit-hours, ~100 events
    (1000, 1000.0, 0.10),                # 1e6 unit-hours, the 10% claim at > 3 sigma
])
def test_hazard_slope_recovers_rate(units, hours, tol):
    lam = 0.01
    rng = np.random.default_rng(42)
    h = nelson_aalen(_poisson_times(rng, lam * units, hours), units)
    assert h.rate() == pytest.approx(lam, rel=tol)


def test_fleet_hazard_uses_node_hours():
    fleet = FleetConfig("f", 10, 10, 1, 100)
    co = coalesce([rec(3600 * k, gpu=str(k)) for k in range(1, 11)])
    h = fleet_hazard(co, fleet, origin=0)
    assert h(10) == pytest.approx(1.0)
    assert fleet_hazard([], fleet).cumulative == [0.0]


def test_availability():
    assert availability(AvailabilityInput(154, 0.88)) == pytest.approx(0.99432, abs=5e-6)
    assert availability(AvailabilityInput(292, 2.2)) == pytest.approx(0.99252, abs=5e-6)
    assert availability(AvailabilityInput(100, 1e-12)) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        AvailabilityInput(0, 1)
