"""Fixed-step closed-loop simulation of the cascaded-inverter microgrid.

Classical RK4 integrates the per-DG angles and filtered powers; at every
stage the voltage/current algebraic loop is re-resolved because the module
voltages depend on the measured current through the sharing coefficients.
Load steps swap the load impedance on the integration grid point nearest
the scheduled time.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .controller import ControllerParams, proportional_weights, sharing_coefficients
from .dispatch import SharingMap, build_load_map, to_current_domain
from .errors import (
    AlgebraicLoopError,
    ComparisonError,
    NumericalError,
    ValidationError,
)
from .network import TWO_PI, Impedance, NetworkSolution, Phasor, wrap_angle

if TYPE_CHECKING:
    from .config import GridConfig

ECONOMICAL = "economical"
PROPORTIONAL = "proportional"
SCHEMES = (ECONOMICAL, PROPORTIONAL)

_LOOP_TOL = 1e-9
_LOOP_MAX_ITER = 100
_LOOP_GAMMA = 0.5

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class SimState:
    """Snapshot of the integrator state: absolute wrapped angles plus the
    filtered active and reactive powers."""

    time: float
    delta: np.ndarray
    p_f: np.ndarray
    q_f: np.ndarray


@dataclass(frozen=True)
class LoadStep:
    start_time: float
    impedance: Impedance


@dataclass(frozen=True)
class LoadSchedule:
    """Ordered load segments; the first must start at t = 0."""

    steps: tuple

    def __post_init__(self):
        if not self.steps:
            raise ValidationError("schedule needs at least one load step")
        times = [s.start_time for s in self.steps]
        if times[0] != 0.0:
            raise ValidationError("first load step must start at t = 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("load step times must be strictly increasing")
        for s in self.steps:
            if abs(s.impedance.as_complex) == 0.0:
                raise ValidationError("scheduled load impedance is singular")

    @property
    def start_times(self) -> tuple:
        return tuple(s.start_time for s in self.steps)

    def impedance_at(self, t: float) -> Impedance:
        z = self.steps[0].impedance
        for s in self.steps:
            if s.start_time <= t:
                z = s.impedance
            else:
                break
        return z

    @staticmethod
    def impedance_from_power(p_w: float, q_var: float, v_rated: float) -> Impedance:
        """Constant impedance drawing (P, Q) at the rated PCC voltage."""
        s = complex(p_w, q_var)
        if abs(s) == 0.0:
            raise ValidationError("load power spec must be nonzero")
        z = v_rated * v_rated / s.conjugate()
        return Impedance(z.real, z.imag)


@dataclass
class Trajectory:
    """Decimated closed-loop records for one scenario run."""

    scheme: str
    dt: float
    decimation: int
    w_c: float
    segment_starts: tuple
    t: np.ndarray
    f: np.ndarray
    v: np.ndarray
    delta: np.ndarray
    p: np.ndarray
    q: np.ndarray
    p_f: np.ndarray
    q_f: np.ndarray
    current: np.ndarray
    v_pcc: np.ndarray
    phi: np.ndarray
    tagc: np.ndarray
    saturated: np.ndarray

    @property
    def n(self) -> int:
        return self.f.shape[1]

    @property
    def delta_rel(self) -> np.ndarray:
        """Angles relative to DG 1; the rotation-invariant view."""
        return wrap_angle(self.delta - self.delta[:, [0]])

    @property
    def tagc_integral(self) -> float:
        return float(_trapezoid(self.tagc, self.t))

    def segment_indices(self):
        """Per-segment index ranges [start, end) over the sample grid."""
        bounds = list(self.segment_starts) + [self.t[-1] + self.dt]
        out = []
        for a, b in zip(bounds, bounds[1:]):
            mask = (self.t >= a - 1e-12) & (self.t < b - 1e-12)
            idx = np.flatnonzero(mask)
            if idx.size:
                out.append((int(idx[0]), int(idx[-1]) + 1))
        return out

    def write_csv(self, path) -> None:
        n = self.n
        cols = (
            ["t"]
            + [f"f_{i+1}" for i in range(n)]
            + [f"V_{i+1}" for i in range(n)]
            + [f"delta_{i+1}" for i in range(n)]
            + [f"P_{i+1}" for i in range(n)]
            + [f"Q_{i+1}" for i in range(n)]
            + [f"Pf_{i+1}" for i in range(n)]
            + [f"Qf_{i+1}" for i in range(n)]
            + ["I", "Vpcc"]
            + [f"phi_{i+1}" for i in range(n)]
            + ["tagc", "saturated"]
        )
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(cols) + "\n")
            for k in range(len(self.t)):
                row = np.concatenate(
                    (
                        [self.t[k]],
                        self.f[k],
                        self.v[k],
                        self.delta[k],
                        self.p[k],
                        self.q[k],
                        self.p_f[k],
                        self.q_f[k],
                        [self.current[k], self.v_pcc[k]],
                        self.phi[k],
                        [self.tagc[k]],
                    )
                )
                fh.write(
                    ",".join(f"{x:.12e}" for x in row)
                    + f",{int(self.saturated[k])}\n"
                )


def build_sharing(config: "GridConfig", scheme: str):
    """Sharing source for a scheme: the current-domain optimal map, or the
    fixed rating-proportional weights."""
    if scheme == ECONOMICAL:
        load_map = build_load_map(config.costs, (0.0, float(sum(config.ratings))))
        return to_current_domain(load_map, config.v_pcc_ref)
    if scheme == PROPORTIONAL:
        return proportional_weights(config.ratings)
    raise ValidationError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def controller_params(config: "GridConfig", scheme: str, w_c: float = None) -> ControllerParams:
    return ControllerParams(
        f_min=config.f_min,
        f_max=config.f_max,
        h=config.h,
        v_pcc_ref=config.v_pcc_ref,
        w_c=config.w_c if w_c is None else w_c,
        p_base=config.p_base,
        sharing=build_sharing(config, scheme),
    )


class _Engine:
    """Hot-path evaluation of the closed loop on raw arrays."""

    def __init__(self, params: ControllerParams, z_lines, cost_coeffs):
        self.params = params
        self.sharing = params.sharing
        self.constant_phi = not isinstance(self.sharing, SharingMap)
        self.z_lines_sum = sum(z.as_complex for z in z_lines)
        self.cost_a, self.cost_b, self.cost_c = cost_coeffs
        self.current_guess = params.p_base / params.v_pcc_ref
        self.z_load_c = None
        self.zp_c = None
        self.zp_mag = None
        self.zp_ang = None

    def set_load(self, z_load: Impedance):
        z_tot = z_load.as_complex + self.z_lines_sum
        if abs(z_tot) == 0.0:
            raise ValidationError("total series impedance is zero")
        self.z_load_c = z_load.as_complex
        self.zp_c = 1.0 / z_tot
        self.zp_mag = abs(self.zp_c)
        self.zp_ang = cmath.phase(self.zp_c)

    def phi_at(self, current_mag: float) -> np.ndarray:
        if self.constant_phi:
            return self.sharing
        return sharing_coefficients(self.sharing, current_mag)

    def resolve(self, delta: np.ndarray):
        """Damped fixed point on the current magnitude; constant weights
        need no iteration because nothing feeds back through phi."""
        p = self.params
        eja = np.exp(1j * delta)
        if self.constant_phi:
            phi = self.sharing
            v = phi * p.v_pcc_ref
            i_c = complex(np.dot(v, eja)) * self.zp_c
            i_mag = abs(i_c)
        else:
            i_mag = self.current_guess
            for _ in range(_LOOP_MAX_ITER):
                phi = self.phi_at(i_mag)
                v = phi * p.v_pcc_ref
                i_out = abs(complex(np.dot(v, eja))) * self.zp_mag
                if abs(i_out - i_mag) <= _LOOP_TOL * max(1.0, i_mag):
                    i_mag = i_out
                    break
                i_mag = (1.0 - _LOOP_GAMMA) * i_mag + _LOOP_GAMMA * i_out
            else:
                raise AlgebraicLoopError(
                    "voltage/current loop did not converge in "
                    f"{_LOOP_MAX_ITER} iterations",
                    last_current=i_mag,
                    residual=abs(i_out - i_mag),
                )
            phi = self.phi_at(i_mag)
            v = phi * p.v_pcc_ref
            i_c = complex(np.dot(v, eja)) * self.zp_c
        self.current_guess = i_mag
        diff = delta[:, None] - delta[None, :] - self.zp_ang
        vv = (v[:, None] * v[None, :]) * self.zp_mag
        p_raw = np.sum(vv * np.cos(diff), axis=1)
        q_raw = np.sum(vv * np.sin(diff), axis=1)
        return i_mag, phi, v, p_raw, q_raw, i_c

    def frequencies(self, phi: np.ndarray, p_f: np.ndarray):
        p = self.params
        f_raw = p.f_min + (p.h / phi) * (p_f / p.p_base)
        f_cmd = np.clip(f_raw, p.f_min, p.f_max)
        return f_cmd, bool(np.any(f_cmd != f_raw))

    def derivs(self, delta: np.ndarray, p_f: np.ndarray, q_f: np.ndarray):
        i_mag, phi, v, p_raw, q_raw, i_c = self.resolve(delta)
        f_cmd, sat = self.frequencies(phi, p_f)
        d_delta = TWO_PI * f_cmd
        w_c = self.params.w_c
        d_pf = (p_raw - p_f) * w_c
        d_qf = (q_raw - q_f) * w_c
        return (d_delta, d_pf, d_qf), (i_mag, phi, v, p_raw, q_raw, i_c, f_cmd, sat)

    def rk4_step(self, delta, p_f, q_f, dt, k1=None):
        if k1 is None:
            k1, _ = self.derivs(delta, p_f, q_f)
        h2 = 0.5 * dt
        k2, _ = self.derivs(delta + h2 * k1[0], p_f + h2 * k1[1], q_f + h2 * k1[2])
        k3, _ = self.derivs(delta + h2 * k2[0], p_f + h2 * k2[1], q_f + h2 * k2[2])
        k4, _ = self.derivs(delta + dt * k3[0], p_f + dt * k3[1], q_f + dt * k3[2])
        s = dt / 6.0
        delta = wrap_angle(delta + s * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]))
        p_f = p_f + s * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        q_f = q_f + s * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        return delta, p_f, q_f

    def tagc(self, p_f: np.ndarray) -> float:
        return float(np.sum((self.cost_a * p_f + self.cost_b) * p_f + self.cost_c))


def _make_engine(config: "GridConfig", scheme: str, w_c: float = None) -> _Engine:
    params = controller_params(config, scheme, w_c=w_c)
    coeffs = (
        np.array([cf.a for cf in config.costs]),
        np.array([cf.b for cf in config.costs]),
        np.array([cf.c for cf in config.costs]),
    )
    return _Engine(params, config.line_impedances(), coeffs)


def solve_algebraic_loop(delta, params: ControllerParams, z_load: Impedance,
                         z_lines, i_guess: float):
    """Resolve the coupled voltage/current fixed point at fixed angles.

    Returns (current magnitude, sharing coefficients, module voltage
    magnitudes, NetworkSolution).
    """
    if not i_guess >= 0.0:
        raise ValidationError("current guess must be non-negative")
    delta = np.asarray(delta, dtype=float)
    engine = _Engine(params, z_lines, (np.zeros_like(delta),) * 3)
    engine.current_guess = i_guess
    engine.set_load(z_load)
    i_mag, phi, v, p_raw, q_raw, i_c = engine.resolve(delta)
    sol = NetworkSolution(
        current=Phasor.from_complex(i_c),
        load_voltage=Phasor.from_complex(z_load.as_complex * i_c),
        p=p_raw,
        q=q_raw,
    )
    return i_mag, phi, v, sol


def derivatives(state: SimState, config: "GridConfig", z_load: Impedance,
                scheme: str, w_c: float = None):
    """Closed-loop state derivatives at one state; the algebraic loop is
    resolved internally.  Returns (d delta, d P_f, d Q_f)."""
    engine = _make_engine(config, scheme, w_c=w_c)
    engine.set_load(z_load)
    k, _ = engine.derivs(state.delta, state.p_f, state.q_f)
    return k


def run_scenario(config: "GridConfig", schedule: LoadSchedule, scheme: str,
                 t_end: float, dt: float = None) -> Trajectory:
    """Integrate a load-step scenario and record a decimated trajectory.

    Scheduled step times are snapped to the integration grid; the load
    impedance swaps between steps, never mid-step.
    """
    dt = config.dt if dt is None else float(dt)
    if not dt > 0.0:
        raise ValidationError("dt must be positive")
    if config.w_c * dt > 0.2:
        raise ValidationError("dt too coarse: w_c * dt must stay at or below 0.2")
    if not t_end > 0.0:
        raise ValidationError("t_end must be positive")
    if schedule.start_times[-1] >= t_end:
        raise ValidationError("t_end must cover the last scheduled load step")

    n_steps = int(round(t_end / dt))
    if n_steps < 1:
        raise ValidationError("t_end must span at least one integration step")
    swap_at = {}
    for s in schedule.steps:
        k = int(round(s.start_time / dt))
        if k in swap_at:
            raise ValidationError(
                f"load steps collide on the {dt:g} s integration grid"
            )
        if k >= n_steps:
            raise ValidationError(
                f"load step at {s.start_time:g} s lies beyond t_end on the grid"
            )
        swap_at[k] = s.impedance
    snapped = tuple(sorted(k * dt for k in swap_at))

    engine = _make_engine(config, scheme)
    n = config.n
    decim = config.output_decimation

    delta = np.zeros(n)
    p_f = np.zeros(n)
    q_f = np.zeros(n)

    n_rec = n_steps // decim + 1
    rec = {
        "t": np.empty(n_rec),
        "f": np.empty((n_rec, n)),
        "v": np.empty((n_rec, n)),
        "delta": np.empty((n_rec, n)),
        "p": np.empty((n_rec, n)),
        "q": np.empty((n_rec, n)),
        "p_f": np.empty((n_rec, n)),
        "q_f": np.empty((n_rec, n)),
        "current": np.empty(n_rec),
        "v_pcc": np.empty(n_rec),
        "phi": np.empty((n_rec, n)),
        "tagc": np.empty(n_rec),
        "saturated": np.empty(n_rec, dtype=bool),
    }
    r = 0

    for k in range(n_steps + 1):
        if k in swap_at:
            engine.set_load(swap_at[k])
        k1, aux = engine.derivs(delta, p_f, q_f)
        if k % decim == 0:
            i_mag, phi, v, p_raw, q_raw, i_c, f_cmd, sat = aux
            rec["t"][r] = k * dt
            rec["f"][r] = f_cmd
            rec["v"][r] = v
            rec["delta"][r] = delta
            rec["p"][r] = p_raw
            rec["q"][r] = q_raw
            rec["p_f"][r] = p_f
            rec["q_f"][r] = q_f
            rec["current"][r] = i_mag
            rec["v_pcc"][r] = abs(engine.z_load_c * i_c)
            rec["phi"][r] = phi
            rec["tagc"][r] = engine.tagc(p_f)
            rec["saturated"][r] = sat
            r += 1
        if k == n_steps:
            break
        delta, p_f, q_f = engine.rk4_step(delta, p_f, q_f, dt, k1=k1)

    for key in rec:
        rec[key] = rec[key][:r]
    return Trajectory(
        scheme=scheme,
        dt=dt,
        decimation=decim,
        w_c=config.w_c,
        segment_starts=snapped,
        **rec,
    )


def simulate_to_steady(config: "GridConfig", z_load: Impedance, scheme: str,
                       w_c: float = None, dt: float = None, t_max: float = 3.0,
                       tol: float = 1e-10):
    """Integrate under a constant load until the filtered powers coincide
    with the raw powers and the frequency commands agree across DGs.

    Returns (SimState, engine resolution tuple) at the settled state.
    Raises NumericalError if t_max passes without settling.
    """
    dt = config.dt if dt is None else float(dt)
    w_c_eff = config.w_c if w_c is None else w_c
    if w_c_eff * dt > 0.2:
        raise ValidationError("dt too coarse: w_c * dt must stay at or below 0.2")
    engine = _make_engine(config, scheme, w_c=w_c)
    engine.set_load(z_load)
    n = config.n
    delta = np.zeros(n)
    p_f = np.zeros(n)
    q_f = np.zeros(n)
    check_every = max(1, int(round(0.01 / dt)))
    n_steps = int(round(t_max / dt))
    for k in range(n_steps):
        k1, aux = engine.derivs(delta, p_f, q_f)
        if k % check_every == 0:
            _, phi, _, p_raw, q_raw, _, f_cmd, _ = aux
            p_gap = np.max(np.abs(p_f - p_raw) / np.maximum(1.0, np.abs(p_raw)))
            q_gap = np.max(np.abs(q_f - q_raw) / np.maximum(1.0, np.abs(q_raw)))
            f_gap = float(f_cmd.max() - f_cmd.min())
            if p_gap <= tol and q_gap <= tol and f_gap <= 1e-9:
                state = SimState(time=k * dt, delta=delta, p_f=p_f, q_f=q_f)
                return state, aux
        delta, p_f, q_f = engine.rk4_step(delta, p_f, q_f, dt, k1=k1)
    raise NumericalError(
        f"no steady state under scheme {scheme!r} within {t_max:g} s"
    )


@dataclass(frozen=True)
class SegmentSettle:
    start: float
    end: float
    reached: bool
    t_settle: float


@dataclass(frozen=True)
class SettleReport:
    segments: tuple

    @property
    def all_reached(self) -> bool:
        return all(s.reached for s in self.segments)


def detect_steady_state(traj: Trajectory, window: float,
                        freq_tol: float = 1e-4, power_tol: float = 1e-4) -> SettleReport:
    """Earliest time in each load segment after which the trailing window
    shows a frequency spread at or below freq_tol (Hz) and a relative
    filtered-power drift at or below power_tol."""
    if window < 10.0 * TWO_PI / traj.w_c:
        raise ValidationError("window must span at least ten filter periods")
    sample = float(traj.t[1] - traj.t[0]) if len(traj.t) > 1 else traj.dt
    wlen = max(1, int(round(window / sample)))
    segments = []
    for i0, i1 in traj.segment_indices():
        reached = False
        t_settle = math.nan
        for j in range(i0 + wlen, i1):
            f_win = traj.f[j - wlen : j + 1]
            spread = float(np.max(f_win.max(axis=1) - f_win.min(axis=1)))
            if spread > freq_tol:
                continue
            pf_win = traj.p_f[j - wlen : j + 1]
            drift = np.max(
                np.ptp(pf_win, axis=0)
                / np.maximum(np.abs(pf_win.mean(axis=0)), 1e-9)
            )
            if drift <= power_tol:
                reached = True
                t_settle = float(traj.t[j])
                break
        segments.append(
            SegmentSettle(
                start=float(traj.t[i0]),
                end=float(traj.t[i1 - 1]),
                reached=reached,
                t_settle=t_settle,
            )
        )
    return SettleReport(segments=tuple(segments))


@dataclass(frozen=True)
class TagcSegment:
    start: float
    end: float
    tagc_a: float
    tagc_b: float
    difference: float
    a_le_b: bool
    reached: bool


@dataclass(frozen=True)
class TagcReport:
    scheme_a: str
    scheme_b: str
    segments: tuple
    integral_a: float
    integral_b: float

    @property
    def a_le_b_everywhere(self) -> bool:
        return all(s.reached and s.a_le_b for s in self.segments)


def compare_tagc(traj_a: Trajectory, traj_b: Trajectory, window: float = None) -> TagcReport:
    """Per-segment steady-state total generation cost for two runs on the
    same grid, plus the integrated cost over each full run."""
    if len(traj_a.t) != len(traj_b.t) or not np.array_equal(traj_a.t, traj_b.t):
        raise ComparisonError("trajectories use different time grids")
    if traj_a.segment_starts != traj_b.segment_starts:
        raise ComparisonError("trajectories use different load schedules")
    if window is None:
        window = max(10.0 * TWO_PI / traj_a.w_c, 0.1)
    settle_a = detect_steady_state(traj_a, window)
    settle_b = detect_steady_state(traj_b, window)
    segments = []
    for (i0, i1), sa, sb in zip(
        traj_a.segment_indices(), settle_a.segments, settle_b.segments
    ):
        reached = sa.reached and sb.reached
        if reached:
            t_on = max(sa.t_settle, sb.t_settle)
            mask = traj_a.t[i0:i1] >= t_on - 1e-12
            ta = traj_a.tagc[i0:i1][mask]
            tb = traj_b.tagc[i0:i1][mask]
            eps = 1e-9 * max(1.0, float(np.max(np.abs(tb))))
            seg = TagcSegment(
                start=float(traj_a.t[i0]),
                end=float(traj_a.t[i1 - 1]),
                tagc_a=float(ta.mean()),
                tagc_b=float(tb.mean()),
                difference=float(ta.mean() - tb.mean()),
                a_le_b=bool(np.all(ta <= tb + eps)),
                reached=True,
            )
        else:
            seg = TagcSegment(
                start=float(traj_a.t[i0]),
                end=float(traj_a.t[i1 - 1]),
                tagc_a=math.nan,
                tagc_b=math.nan,
                difference=math.nan,
                a_le_b=False,
                reached=False,
            )
        segments.append(seg)
    return TagcReport(
        scheme_a=traj_a.scheme,
        scheme_b=traj_b.scheme,
        segments=tuple(segments),
        integral_a=traj_a.tagc_integral,
        integral_b=traj_b.tagc_integral,
    )
