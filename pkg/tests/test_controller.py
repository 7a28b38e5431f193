import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cascadegrid import (
    ControllerParams,
    CostFunction,
    DegenerateSharingError,
    SharingMap,
    ValidationError,
    build_load_map,
    economical_command,
    filter_step,
    proportional_command,
    proportional_weights,
    sharing_coefficients,
    to_current_domain,
)


@pytest.fixture()
def params():
    return ControllerParams(
        f_min=49.0, f_max=51.0, h=0.1, v_pcc_ref=110.0, w_c=100 * math.pi, p_base=1000.0
    )


@pytest.fixture()
def current_map(study_costs):
    return to_current_domain(build_load_map(study_costs, (0.0, 3000.0)), 110.0)


def test_params_validation(current_map):
    with pytest.raises(ValidationError):
        ControllerParams(50.0, 49.0, 0.1, 110.0, 314.0, 1000.0)
    with pytest.raises(ValidationError):
        ControllerParams(49.0, 51.0, -0.1, 110.0, 314.0, 1000.0)
    with pytest.raises(ValidationError):
        ControllerParams(49.0, 51.0, 0.1, 110.0, 314.0, 1000.0, sharing=np.array([0.5, 0.6]))
    load_map = SharingMap(
        form="affine_in_load",
        domain=(0.0, 100.0),
        alpha=np.array([1.0]),
        beta=np.array([0.0]),
    )
    with pytest.raises(ValidationError):
        ControllerParams(49.0, 51.0, 0.1, 110.0, 314.0, 1000.0, sharing=load_map)


def test_sharing_coefficients_at_one_amp(current_map):
    phi = sharing_coefficients(current_map, 1.0)
    g = np.array([660 / 31 + 3 / 310, 1100 / 31 + 1 / 62, 1650 / 31 - 4 / 155])
    assert_allclose(phi, g / g.sum(), rtol=1e-12)
    assert phi.sum() == pytest.approx(1.0, abs=1e-12)
    assert_allclose(phi, [0.19364, 0.32273, 0.48364], atol=1e-5)


def test_identical_maps_share_equally():
    m = build_load_map([CostFunction(0.2)] * 4, (0.0, 1000.0))
    g = to_current_domain(m, 110.0)
    for current in (0.01, 0.5, 3.0, 8.0):
        assert_allclose(sharing_coefficients(g, current), [0.25] * 4, rtol=1e-12)


def test_sharing_sums_to_one_across_currents(current_map):
    rng = np.random.default_rng(31)
    for current in rng.uniform(0.0, 25.0, 20):
        phi = sharing_coefficients(current_map, float(current))
        assert abs(phi.sum() - 1.0) <= 1e-12


def test_small_current_uses_slope_limit(current_map):
    phi = sharing_coefficients(current_map, 1e-5)
    assert_allclose(phi, [6 / 31, 10 / 31, 15 / 31], rtol=1e-12)


def test_degenerate_map_raises():
    grid = np.array([1e-3, 1.0])
    cols = np.array([[-5.0, -4.0], [-5.0, 10.0]]).T
    bad = SharingMap(form="tabulated", domain=(1e-3, 1.0), grid=grid, columns=cols, v_pcc=110.0)
    with pytest.raises(DegenerateSharingError):
        sharing_coefficients(bad, 1e-2)


def test_zero_power_commands_f_min(params):
    cmd = economical_command(0.5, 0.0, params)
    assert cmd.frequency == pytest.approx(49.0)
    assert not cmd.saturated


def test_command_per_unit_law(params):
    # phi = 1, half of the base power: the droop adds h * 0.5 Hz
    cmd = economical_command(1.0, 500.0, params)
    assert cmd.frequency == pytest.approx(49.05, rel=1e-12)
    assert cmd.voltage_magnitude == pytest.approx(110.0)


def test_voltage_fraction(params):
    assert economical_command(0.5, 100.0, params).voltage_magnitude == pytest.approx(55.0)


def test_frequency_monotone_until_saturation(params):
    freqs = [economical_command(0.4, p, params).frequency for p in (0.0, 100.0, 400.0)]
    assert freqs[0] < freqs[1] < freqs[2]
    sat = economical_command(0.4, 1e6, params)
    assert sat.saturated and sat.frequency == pytest.approx(51.0)
    low = economical_command(0.4, -1e6, params)
    assert low.saturated and low.frequency == pytest.approx(49.0)


def test_bad_share_rejected(params):
    with pytest.raises(DegenerateSharingError):
        economical_command(0.0, 10.0, params)
    with pytest.raises(ValidationError):
        economical_command(1.5, 10.0, params)


def test_proportional_weights():
    assert_allclose(proportional_weights([1000.0] * 3), [1 / 3] * 3, rtol=1e-12)
    assert_allclose(proportional_weights([200.0, 100.0]), [2 / 3, 1 / 3], rtol=1e-12)
    with pytest.raises(ValidationError):
        proportional_weights([1.0, -2.0])


def test_proportional_command_same_law(params):
    assert proportional_command(1 / 3, 120.0, params).frequency == pytest.approx(
        economical_command(1 / 3, 120.0, params).frequency
    )
    assert proportional_command(1 / 3, 0.0, params).voltage_magnitude == pytest.approx(110.0 / 3)


def test_synchronized_commands_imply_share_ratios(params, current_map):
    # equal frequencies force P_i proportional to phi_i; feed powers built
    # that way and check the commands coincide
    phi = sharing_coefficients(current_map, 5.0)
    powers = 700.0 * phi
    cmds = [economical_command(float(f), float(p), params) for f, p in zip(phi, powers)]
    freqs = [c.frequency for c in cmds]
    assert max(freqs) - min(freqs) <= 1e-12
    volts = np.array([c.voltage_magnitude for c in cmds])
    assert volts.sum() == pytest.approx(110.0, rel=1e-12)


def test_filter_step_fixed_point():
    dp, dq = filter_step(120.0, 30.0, 120.0, 30.0, 100 * math.pi, 1e-4)
    assert dp == pytest.approx(0.0)
    assert dq == pytest.approx(0.0)


def test_filter_step_direct_value():
    dp, _ = filter_step(100.0, 0.0, 0.0, 0.0, 100 * math.pi, 1e-4)
    assert dp == pytest.approx(10000 * math.pi)


def test_filter_step_time_constant():
    # integrate the one-pole filter against its exponential solution
    w_c = 100 * math.pi
    dt = 1e-5
    p_f = 0.0
    steps = int(round(1.0 / w_c / dt))
    for _ in range(steps):
        dp, _ = filter_step(1.0, 0.0, p_f, 0.0, w_c, dt)
        p_f += dp * dt
    assert p_f == pytest.approx(1.0 - math.exp(-1.0), rel=0.02)


def test_filter_step_guards():
    with pytest.raises(ValidationError):
        filter_step(1.0, 0.0, 0.0, 0.0, 100 * math.pi, -1e-4)
    with pytest.raises(ValidationError):
        filter_step(1.0, 0.0, 0.0, 0.0, 2e4, 1e-4)
