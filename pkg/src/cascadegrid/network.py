"""Quasi-static phasor model of the series-cascaded inverter loop.

Every DG module sits in one series loop with the lines and the load, so a
single current flows through all of them.  The circuit is solved
algebraically from the module voltage phasors; only controller states
evolve in time.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .errors import SingularCircuitError, ValidationError

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Wrap angles to (-pi, pi]."""
    w = np.mod(np.asarray(theta, dtype=float), TWO_PI)
    w = np.where(w > math.pi, w - TWO_PI, w)
    if np.ndim(theta) == 0:
        return float(w)
    return w


@dataclass(frozen=True)
class Phasor:
    magnitude: float
    angle: float

    def __post_init__(self):
        if not self.magnitude >= 0.0:
            raise ValidationError("phasor magnitude must be non-negative")
        object.__setattr__(self, "angle", wrap_angle(self.angle))

    @classmethod
    def from_complex(cls, z: complex) -> "Phasor":
        return cls(abs(z), cmath.phase(z))

    @property
    def as_complex(self) -> complex:
        return self.magnitude * cmath.exp(1j * self.angle)


@dataclass(frozen=True)
class Impedance:
    resistance: float
    reactance: float

    def __post_init__(self):
        if not (math.isfinite(self.resistance) and math.isfinite(self.reactance)):
            raise ValidationError("impedance components must be finite")

    @property
    def as_complex(self) -> complex:
        return complex(self.resistance, self.reactance)

    @property
    def magnitude(self) -> float:
        return abs(self.as_complex)


@dataclass(frozen=True)
class NetworkSolution:
    """Loop current, load voltage, and per-DG active/reactive powers."""

    current: Phasor
    load_voltage: Phasor
    p: np.ndarray
    q: np.ndarray


def _total_impedance(z_load: Impedance, z_lines) -> complex:
    z = z_load.as_complex + sum(zl.as_complex for zl in z_lines)
    if abs(z) == 0.0:
        raise SingularCircuitError("total series impedance is zero")
    return z


def equivalent_factor(z_load: Impedance, z_lines) -> tuple:
    """Magnitude and phase of the reciprocal total series impedance.

    The returned magnitude has admittance dimension (1/ohm), which is what
    makes V*V*factor come out in watts in the power expressions.
    """
    y = 1.0 / _total_impedance(z_load, z_lines)
    return abs(y), cmath.phase(y)


def _powers_trig(v: np.ndarray, d: np.ndarray, zp_mag: float, zp_ang: float):
    diff = d[:, None] - d[None, :] - zp_ang
    vv = (v[:, None] * v[None, :]) * zp_mag
    p = np.sum(vv * np.cos(diff), axis=1)
    q = np.sum(vv * np.sin(diff), axis=1)
    return p, q


def solve_network(dg_voltages, z_load: Impedance, z_lines=()) -> NetworkSolution:
    """Solve the series loop for the given module voltage phasors.

    Current is the phasor sum of module voltages over the total impedance;
    the load voltage is the divider share across the load.  Per-DG powers
    use the trigonometric double sums so the complex-power route stays an
    independent cross-check (see complex_powers).
    """
    dg_voltages = list(dg_voltages)
    if not dg_voltages:
        raise ValidationError("at least one DG voltage is required")
    v = np.array([ph.magnitude for ph in dg_voltages])
    d = np.array([ph.angle for ph in dg_voltages])
    z_tot = _total_impedance(z_load, z_lines)
    zp = 1.0 / z_tot
    i_c = complex(np.sum(v * np.exp(1j * d))) * zp
    p, q = _powers_trig(v, d, abs(zp), cmath.phase(zp))
    return NetworkSolution(
        current=Phasor.from_complex(i_c),
        load_voltage=Phasor.from_complex(z_load.as_complex * i_c),
        p=p,
        q=q,
    )


def complex_powers(dg_voltages, current: Phasor) -> np.ndarray:
    """Per-DG complex power V_i e^{j delta_i} * conj(I); cross-check path."""
    i_conj = current.as_complex.conjugate()
    return np.array([ph.as_complex * i_conj for ph in dg_voltages])


def power_angle_jacobians(dg_voltages, z_load: Impedance, z_lines=()):
    """Analytic partials of the per-DG powers with respect to the angles,
    module voltage magnitudes held fixed.

    Row sums vanish identically: shifting every angle together leaves all
    power flows unchanged (rotational symmetry of the loop).
    """
    dg_voltages = list(dg_voltages)
    if not dg_voltages:
        raise ValidationError("at least one DG voltage is required")
    v = np.array([ph.magnitude for ph in dg_voltages])
    d = np.array([ph.angle for ph in dg_voltages])
    zp_mag, zp_ang = equivalent_factor(z_load, z_lines)
    diff = d[:, None] - d[None, :] - zp_ang
    vv = (v[:, None] * v[None, :]) * zp_mag
    mp = vv * np.sin(diff)
    mq = vv * np.cos(diff)
    t_p = mp - np.diag(mp.sum(axis=1))
    t_q = -mq + np.diag(mq.sum(axis=1))
    return t_p, t_q
