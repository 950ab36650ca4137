import pytest
from hypothesis import given, strategies as st

from fedswitch.channel import LinkParams
from fedswitch.energy import (ComputeProfile, PayloadSizes, communication_energy, computation_energy,
                              relaxed_energy, round_energy, transmission_delay)

PROFILE = ComputeProfile()


def test_computation_hand_value():
    assert computation_energy(PROFILE, PayloadSizes(1.0, 1.0), 1.0) == pytest.approx(6.6375e-6, rel=1e-14)


def test_unit_rate_communication():
    assert communication_energy(1.0, PayloadSizes(1.0, 1.0), 1.0, 1.0, 1.0) == 1.0
    assert transmission_delay(1.0, 1.0, 1.0, 1.0) == 1.0


def test_relaxed_hand_value():
    sizes = PayloadSizes(1.0, 1.0)
    rel = relaxed_energy(PROFILE, sizes, 0.0, 0.2, 5e-3)
    assert rel == pytest.approx(1e-3, rel=1e-14)


def test_vanishing_energy():
    link = LinkParams(100.0, 3.8, 1.0, 1e-5, 1e9, 1e-19)
    assert round_energy(PROFILE, PayloadSizes(10.0, 1.0), 0, 1e-300, 0.5, 3.0, link) < 1e-300


def test_relaxed_equals_exact_at_actual_delay():
    sizes = PayloadSizes(1e6, 2e5)
    link = LinkParams(100.0, 3.8, 1.0, 1e-5, 1e9, 1e-19)
    delay = transmission_delay(sizes.G_dw, link.W, 0.1, 7.0)
    exact = round_energy(PROFILE, sizes, 30, 0.15, 0.1, 7.0, link)
    assert relaxed_energy(PROFILE, sizes, 30, 0.15, delay) == pytest.approx(exact, rel=1e-14)


def test_additive_terms():
    sizes = PayloadSizes(1e6, 2e5)
    link = LinkParams(100.0, 3.8, 1.0, 1e-5, 1e9, 1e-19)
    total = round_energy(PROFILE, sizes, 12, 0.1, 0.2, 3.0, link)
    parts = computation_energy(PROFILE, sizes, 12) + communication_energy(0.1, sizes, 1e9, 0.2, 3.0)
    assert total == parts


def test_errors():
    sizes = PayloadSizes(1.0, 1.0)
    with pytest.raises(ValueError):
        transmission_delay(1.0, 1.0, 0.5, 0.0)
    with pytest.raises(ValueError):
        transmission_delay(1.0, 1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        relaxed_energy(PROFILE, sizes, 1, 0.1, 0.0)
    with pytest.raises(ValueError):
        PayloadSizes(1.0, 2.0)
    with pytest.raises(ValueError):
        ComputeProfile(tau=0)
    with pytest.raises(ValueError):
        computation_energy(PROFILE, sizes, -1)


@given(D=st.floats(0, 1e3), P=st.floats(0, 1.0), E=st.floats(1e-6, 1.0), dD=st.floats(0, 10),
       dP=st.floats(0, 1), dE=st.floats(0, 1))
def test_relaxed_monotone(D, P, E, dD, dP, dE):
    sizes = PayloadSizes(1e6, 1e5)
    base = relaxed_energy(PROFILE, sizes, D, P, E)
    assert relaxed_energy(PROFILE, sizes, D + dD, P, E) >= base
    assert relaxed_energy(PROFILE, sizes, D, P + dP, E) >= base
    assert relaxed_energy(PROFILE, sizes, D, P, E + dE) >= base


def test_bottleneck_relaxation_dominates():
    sizes = PayloadSizes(1e6, 2e5)
    links = [(0.2, 3.0), (0.5, 1.0), (0.3, 10.0)]
    E_t = max(transmission_delay(sizes.G_dw, 1e9, d, s) for d, s in links)
    comp = computation_energy(PROFILE, sizes, 5)
    exact = [communication_energy(0.2, sizes, 1e9, d, s) for d, s in links]
    relaxed = relaxed_energy(PROFILE, sizes, 5, 0.2, E_t) - comp
    assert all(relaxed >= e * (1 - 1e-14) for e in exact)
    assert relaxed == pytest.approx(max(exact), rel=1e-14)
