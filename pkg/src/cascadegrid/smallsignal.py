"""Linearized dynamics around a steady operating point.

The state is [dP_f | dQ_f | d delta~] per DG.  Filtered powers relax at
the filter cutoff and couple to the relative angles through the power
Jacobians; the angles integrate the per-unit droop gain times the
filtered power.  Uniform rotation of all angles changes nothing, so one
structural zero eigenvalue is always present.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .network import TWO_PI, Impedance, Phasor, power_angle_jacobians, solve_network
from .simulator import ECONOMICAL, simulate_to_steady

STABLE = "stable"
MARGINAL = "marginal"
UNSTABLE = "unstable"

PARAM_LOAD_RESISTANCE = "load_resistance"
PARAM_FILTER_CUTOFF = "w_c"

_OP_RESIDUAL_TOL = 1e-6
_EIG_RESIDUAL_RTOL = 1e-8
_ZERO_BALL_RTOL = 1e-8


@dataclass(frozen=True)
class OperatingPoint:
    """Steady state the linearization is built around.

    Sharing coefficients are frozen at their steady values; the current
    feedback through them contributes nothing to first order at an
    in-phase operating point.
    """

    delta: np.ndarray
    v: np.ndarray
    phi: np.ndarray
    current_mag: float
    z_load: Impedance
    z_lines: tuple
    w_c: float
    h: float
    p_base: float

    @property
    def n(self) -> int:
        return len(self.delta)

    def phasors(self):
        return [Phasor(float(m), float(a)) for m, a in zip(self.v, self.delta)]


@dataclass(frozen=True)
class StateMatrix:
    a: np.ndarray
    op: OperatingPoint

    @property
    def n(self) -> int:
        return self.op.n

    @property
    def norm(self) -> float:
        """Max row sum norm, the scale for residual and zero-ball tests."""
        return float(np.max(np.sum(np.abs(self.a), axis=1)))


def operating_point_residual(op: OperatingPoint) -> float:
    """How far the point is from a true closed-loop steady state.

    Combines the network current mismatch, the spread of the per-DG
    frequency offsets, share normalization, and the voltage decomposition.
    """
    sol = solve_network(op.phasors(), op.z_load, op.z_lines)
    r_current = abs(sol.current.magnitude - op.current_mag) / max(1.0, op.current_mag)
    f_off = (op.h / op.phi) * (sol.p / op.p_base)
    r_sync = float(f_off.max() - f_off.min()) if op.n > 1 else 0.0
    r_phi = abs(float(op.phi.sum()) - 1.0)
    v_ref = float(op.v.sum())
    r_volt = float(np.max(np.abs(op.v - op.phi * v_ref))) / max(1.0, v_ref)
    return max(r_current, r_sync, r_phi, r_volt)


def build_state_matrix(op: OperatingPoint) -> StateMatrix:
    """Assemble the 3n x 3n state matrix at a consistent operating point."""
    residual = operating_point_residual(op)
    if residual > _OP_RESIDUAL_TOL:
        raise ValidationError(
            f"operating point is not steady (residual {residual:.3e})"
        )
    t_p, t_q = power_angle_jacobians(op.phasors(), op.z_load, op.z_lines)
    n = op.n
    w_c = op.w_c
    a = np.zeros((3 * n, 3 * n))
    a[:n, :n] = -w_c * np.eye(n)
    a[n : 2 * n, n : 2 * n] = -w_c * np.eye(n)
    a[:n, 2 * n :] = w_c * t_p
    a[n : 2 * n, 2 * n :] = w_c * t_q
    # angle rate per watt of filtered power, in rad/s on the per-unit base
    a[2 * n :, :n] = np.diag(TWO_PI * op.h / (op.p_base * op.phi))
    return StateMatrix(a=a, op=op)


def spectrum(matrix) -> np.ndarray:
    """All eigenvalues of the state matrix via the dense nonsymmetric
    eigensolver, each checked against its residual ||Av - lambda v||."""
    if isinstance(matrix, StateMatrix):
        a = matrix.a
    else:
        a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError("state matrix must be square")
    if not np.all(np.isfinite(a)):
        raise ValidationError("state matrix entries must be finite")
    norm = float(np.max(np.sum(np.abs(a), axis=1)))
    try:
        eigs, vecs = np.linalg.eig(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"eigensolver failed on a matrix of norm {norm:.3e}: {exc}"
        ) from exc
    if norm > 0.0:
        resid = np.linalg.norm(a @ vecs - vecs * eigs, axis=0)
        scale = np.linalg.norm(vecs, axis=0)
        worst = float(np.max(resid / np.maximum(scale, 1e-300)))
        if worst > _EIG_RESIDUAL_RTOL * norm:
            raise NumericalError(
                f"eigenpair residual {worst:.3e} exceeds "
                f"{_EIG_RESIDUAL_RTOL:g} * ||A|| = {_EIG_RESIDUAL_RTOL * norm:.3e}"
            )
    order = np.lexsort((eigs.imag, eigs.real))
    return eigs[order]


def stability_verdict(eigs, a_norm: float = 1.0) -> str:
    """Classify a spectrum, exempting one structural zero mode.

    The single smallest-modulus eigenvalue is discarded when it sits inside
    the zero ball; two or more eigenvalues in the ball mean the symmetry
    mode is not simple and the verdict is marginal.
    """
    eigs = np.asarray(eigs, dtype=complex)
    if eigs.size == 0:
        raise ValidationError("empty spectrum")
    ball = _ZERO_BALL_RTOL * max(a_norm, 0.0)
    inside = np.abs(eigs) <= ball
    if int(inside.sum()) >= 2:
        return MARGINAL
    rest = eigs
    if int(inside.sum()) == 1:
        keep = np.ones(eigs.size, dtype=bool)
        keep[int(np.argmin(np.abs(eigs)))] = False
        rest = eigs[keep]
    if rest.size == 0 or np.all(rest.real < -ball):
        return STABLE
    if np.any(rest.real > ball):
        return UNSTABLE
    return MARGINAL


def find_operating_point(config, z_load: Impedance, scheme: str = ECONOMICAL,
                         w_c: float = None, t_max: float = 3.0) -> OperatingPoint:
    """Steady state under a constant load, acquired by running the
    nonlinear closed loop until it settles."""
    state, aux = simulate_to_steady(config, z_load, scheme, w_c=w_c, t_max=t_max)
    i_mag, phi, v, _, _, _, _, _ = aux
    return OperatingPoint(
        delta=state.delta.copy(),
        v=np.asarray(v, dtype=float).copy(),
        phi=np.asarray(phi, dtype=float).copy(),
        current_mag=float(i_mag),
        z_load=z_load,
        z_lines=config.line_impedances(),
        w_c=config.w_c if w_c is None else float(w_c),
        h=config.h,
        p_base=config.p_base,
    )


@dataclass
class RootLocus:
    """Eigenvalue loci over one swept parameter."""

    parameter: str
    values: np.ndarray
    eigenvalues: np.ndarray
    verdicts: list
    failures: list

    def write_csv(self, path) -> None:
        m = self.eigenvalues.shape[1]
        header = (
            "param,"
            + ",".join(f"re_{j+1},im_{j+1}" for j in range(m))
            + ",verdict"
        )
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(header + "\n")
            for val, row, verdict in zip(self.values, self.eigenvalues, self.verdicts):
                cells = [f"{val:.12e}"]
                for lam in row:
                    cells.append(f"{lam.real:.12e}")
                    cells.append(f"{lam.imag:.12e}")
                cells.append(verdict)
                fh.write(",".join(cells) + "\n")


def _match_to_previous(prev: np.ndarray, eigs: np.ndarray) -> np.ndarray:
    """Greedy nearest-neighbor pairing so loci stay continuous curves."""
    if prev is None:
        return eigs
    out = np.empty_like(eigs)
    used = np.zeros(eigs.size, dtype=bool)
    for i, target in enumerate(prev):
        dist = np.abs(eigs - target)
        dist[used] = math.inf
        j = int(np.argmin(dist))
        used[j] = True
        out[i] = eigs[j]
    return out


def root_locus(config, parameter: str, start: float, stop: float, steps: int,
               scheme: str = ECONOMICAL, load_resistance: float = 12.0) -> RootLocus:
    """Sweep the load resistance or the filter cutoff and collect the
    spectrum at each steady state; failures are flagged, not fatal."""
    if parameter not in (PARAM_LOAD_RESISTANCE, PARAM_FILTER_CUTOFF):
        raise ValidationError(
            f"unknown sweep parameter {parameter!r}; expected "
            f"{PARAM_LOAD_RESISTANCE!r} or {PARAM_FILTER_CUTOFF!r}"
        )
    if steps < 2:
        raise ValidationError("sweep needs at least two steps")
    values = np.linspace(start, stop, steps)
    width = 3 * config.n
    rows = np.full((steps, width), np.nan, dtype=complex)
    verdicts = []
    failures = []
    prev = None
    for k, val in enumerate(values):
        try:
            if parameter == PARAM_LOAD_RESISTANCE:
                z_load = Impedance(float(val), 0.0)
                w_c = None
            else:
                z_load = Impedance(float(load_resistance), 0.0)
                w_c = float(val)
            op = find_operating_point(config, z_load, scheme=scheme, w_c=w_c)
            sm = build_state_matrix(op)
            eigs = spectrum(sm)
            matched = _match_to_previous(prev, eigs)
            prev = matched
            rows[k] = matched
            verdicts.append(stability_verdict(eigs, sm.norm))
        except (NumericalError, ValidationError) as exc:
            failures.append((float(val), str(exc)))
            verdicts.append("failed")
    return RootLocus(
        parameter=parameter,
        values=values,
        eigenvalues=rows,
        verdicts=verdicts,
        failures=failures,
    )
