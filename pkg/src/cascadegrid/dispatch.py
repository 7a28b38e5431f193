"""Cost-minimizing dispatch and the optimal sharing maps derived from it.

The solver allocates a total load among DGs so that marginal generation
costs equalize (units clamped at a bound excluded).  Viewing the per-DG
optimum as a function of the total load, or of the common loop current,
gives the sharing map the decentralized controller consumes.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleLoadError, NumericalError, ValidationError

#: Currents below this are treated as the zero-load limit; the module
#: voltage expressions contain 1/I terms and lose meaning as I -> 0.
MIN_CURRENT_A = 1e-3

DEFAULT_MAP_SAMPLES = 1001

AFFINE_IN_LOAD = "affine_in_load"
AFFINE_IN_CURRENT = "affine_in_current"
TABULATED = "tabulated"

_BALANCE_RTOL = 1e-9
_MAX_BISECT = 200


@dataclass(frozen=True)
class CostFunction:
    """Convex generation cost a*P^2 + b*P + c on the interval [p_min, p_max].

    Either a > 0 (strictly increasing marginal cost) or a = 0 with b > 0
    (affine cost); p_max may be infinite.
    """

    a: float
    b: float = 0.0
    c: float = 0.0
    p_min: float = 0.0
    p_max: float = math.inf

    def __post_init__(self):
        for name in ("a", "b", "c", "p_min"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"cost coefficient {name} must be finite")
        if not (self.a > 0.0 or (self.a == 0.0 and self.b > 0.0)):
            raise ValidationError("cost must have a > 0, or a = 0 with b > 0")
        if not 0.0 <= self.p_min <= self.p_max:
            raise ValidationError("cost bounds must satisfy 0 <= p_min <= p_max")

    def cost(self, p):
        return (self.a * p + self.b) * p + self.c

    def marginal(self, p):
        return 2.0 * self.a * p + self.b


@dataclass(frozen=True)
class DispatchResult:
    """Optimal dispatch: per-DG powers, the shared incremental cost, and
    the set of DG indices clamped at a bound."""

    powers: np.ndarray
    incremental_cost: float
    active_bounds: frozenset
    total_cost: float


def total_cost(costs, powers) -> float:
    return float(sum(cf.cost(float(p)) for cf, p in zip(costs, powers)))


def _coef_arrays(costs):
    a = np.array([cf.a for cf in costs], dtype=float)
    b = np.array([cf.b for cf in costs], dtype=float)
    c = np.array([cf.c for cf in costs], dtype=float)
    lo = np.array([cf.p_min for cf in costs], dtype=float)
    hi = np.array([cf.p_max for cf in costs], dtype=float)
    return a, b, c, lo, hi


def solve_dispatch(costs, p_load: float, enforce_bounds: bool = False) -> DispatchResult:
    """Minimize total generation cost subject to sum(P_i) = p_load.

    Bisection on the shared incremental cost: each DG inverts its marginal
    cost at the trial value (clamped into its bounds when enforce_bounds is
    set), and the bracket narrows until the power balance closes.
    """
    costs = list(costs)
    if not costs:
        raise ValidationError("at least one cost function is required")
    if not math.isfinite(p_load):
        raise ValidationError("load must be finite")
    a, b, c, lo_b, hi_b = _coef_arrays(costs)
    n = len(costs)
    tol = _BALANCE_RTOL * max(1.0, abs(p_load))

    if enforce_bounds:
        agg_min, agg_max = float(lo_b.sum()), float(hi_b.sum())
        if p_load < agg_min - tol:
            raise InfeasibleLoadError(
                f"load {p_load:g} W is below the aggregate minimum {agg_min:g} W"
            )
        if p_load > agg_max + tol:
            raise InfeasibleLoadError(
                f"load {p_load:g} W exceeds the aggregate maximum {agg_max:g} W"
            )
    elif not np.all(a > 0.0):
        raise ValidationError(
            "unbounded dispatch requires strictly convex costs (a > 0); "
            "enable bounds for affine costs"
        )

    quad = a > 0.0
    two_a = np.where(quad, 2.0 * a, 1.0)

    def powers_at(lam: float) -> np.ndarray:
        p = (lam - b) / two_a
        if enforce_bounds:
            # a flat marginal (a = 0) fills to p_max once lam reaches b
            p = np.where(quad, p, np.where(lam >= b, hi_b, lo_b))
            p = np.clip(p, lo_b, hi_b)
        return p

    # Seed the bracket at the extreme marginal costs, then expand until the
    # summed inversion straddles the load (it is monotone in lambda).
    lam_lo = float(np.min(np.where(quad, 2.0 * a * lo_b + b, b))) - 1.0
    lam_hi = float(np.max(b)) + 1.0
    width = max(1.0, abs(lam_lo), abs(lam_hi))
    for _ in range(200):
        if powers_at(lam_lo).sum() <= p_load + tol:
            break
        lam_lo -= width
        width *= 2.0
    width = max(1.0, abs(lam_lo), abs(lam_hi))
    for _ in range(200):
        if powers_at(lam_hi).sum() >= p_load - tol:
            break
        lam_hi += width
        width *= 2.0

    for _ in range(_MAX_BISECT):
        mid = 0.5 * (lam_lo + lam_hi)
        if powers_at(mid).sum() < p_load:
            lam_lo = mid
        else:
            lam_hi = mid
        if (lam_hi - lam_lo) <= 1e-15 * max(1.0, abs(lam_lo), abs(lam_hi)):
            break
    lam = 0.5 * (lam_lo + lam_hi)
    powers = powers_at(lam)
    residual = p_load - float(powers.sum())

    if abs(residual) > tol and enforce_bounds:
        # A flat-marginal unit makes the summed inversion jump across lam;
        # spread the leftover over the units sitting on the jump.
        slack = max(tol, 4.0 * (lam_hi - lam_lo), 1e-12 * max(1.0, abs(lam)))
        marginal = [i for i in range(n) if a[i] == 0.0 and abs(b[i] - lam) <= slack]
        if marginal:
            powers = powers.copy()
            share = residual / len(marginal)
            for i in marginal:
                powers[i] = min(max(powers[i] + share, lo_b[i]), hi_b[i])
            leftover = p_load - float(powers.sum())
            for i in marginal:
                if abs(leftover) <= tol:
                    break
                moved = min(max(powers[i] + leftover, lo_b[i]), hi_b[i])
                leftover -= moved - powers[i]
                powers[i] = moved
            residual = p_load - float(powers.sum())

    if abs(residual) > tol:
        raise NumericalError(
            f"dispatch bisection failed to balance the load (residual {residual:g} W)"
        )

    active = frozenset()
    if enforce_bounds:
        eps = 1e-9 * np.maximum(1.0, np.abs(np.where(np.isfinite(hi_b), hi_b, 0.0)))
        active = frozenset(
            int(i)
            for i in range(n)
            if powers[i] <= lo_b[i] + eps[i]
            or (math.isfinite(hi_b[i]) and powers[i] >= hi_b[i] - eps[i])
        )
    return DispatchResult(
        powers=powers,
        incremental_cost=lam,
        active_bounds=active,
        total_cost=float(np.sum((a * powers + b) * powers + c)),
    )


def _grid(cf: CostFunction, step: float) -> np.ndarray:
    pts = cf.p_min + step * np.arange(int((cf.p_max - cf.p_min) / step + 1e-12) + 1)
    if pts[-1] < cf.p_max - 1e-12 * max(1.0, cf.p_max):
        pts = np.append(pts, cf.p_max)
    return pts


def brute_force_dispatch(costs, p_load: float, grid_step: float) -> DispatchResult:
    """Exhaustive grid search used as an independent dispatch oracle.

    The first n-1 DGs are enumerated on a uniform grid and the remainder is
    assigned to the last DG; infeasible points are rejected.  Exponential in
    n, so restricted to n <= 4 and intended for narrow bound boxes.
    """
    costs = list(costs)
    n = len(costs)
    if n == 0:
        raise ValidationError("at least one cost function is required")
    if n > 4:
        raise ValidationError("brute force oracle supports at most 4 DGs")
    if not grid_step > 0.0:
        raise ValidationError("grid_step must be positive")
    for i, cf in enumerate(costs[:-1]):
        if not math.isfinite(cf.p_max):
            raise ValidationError(f"brute force needs finite bounds on DG {i}")

    tol = 1e-9 * max(1.0, abs(p_load))
    last = costs[-1]
    if n == 1:
        if not (last.p_min - tol <= p_load <= last.p_max + tol):
            raise InfeasibleLoadError(
                f"load {p_load:g} W outside the single DG bounds "
                f"[{last.p_min:g}, {last.p_max:g}] W"
            )
        powers = np.array([p_load])
    else:
        grids = [_grid(cf, grid_step) for cf in costs[:-1]]
        vec = grids[-1]
        vec_cost = costs[n - 2].cost(vec)
        best_cost = math.inf
        best = None
        for combo in itertools.product(*grids[:-1]):
            head = sum(combo)
            head_cost = sum(cf.cost(p) for cf, p in zip(costs, combo))
            rem = p_load - head - vec
            ok = (rem >= last.p_min - tol) & (rem <= last.p_max + tol)
            if not ok.any():
                continue
            tot = head_cost + vec_cost[ok] + last.cost(rem[ok])
            k = int(np.argmin(tot))
            if tot[k] < best_cost:
                best_cost = float(tot[k])
                idx = np.flatnonzero(ok)[k]
                best = (*combo, float(vec[idx]), float(rem[idx]))
        if best is None:
            raise InfeasibleLoadError(
                f"no feasible grid point for load {p_load:g} W at step {grid_step:g} W"
            )
        powers = np.array(best)

    half = 0.5 * grid_step
    active = frozenset(
        int(i)
        for i, cf in enumerate(costs)
        if powers[i] <= cf.p_min + half
        or (math.isfinite(cf.p_max) and powers[i] >= cf.p_max - half)
    )
    interior = [i for i in range(n) if i not in active]
    probe = interior if interior else list(range(n))
    lam = float(np.mean([costs[i].marginal(powers[i]) for i in probe]))
    return DispatchResult(
        powers=powers,
        incremental_cost=lam,
        active_bounds=active,
        total_cost=total_cost(costs, powers),
    )


@dataclass(frozen=True)
class SharingMap:
    """Per-DG optimal share as a function of total load or loop current.

    Affine forms store slope/offset pairs (value_i = alpha_i * x + beta_i);
    the tabulated form stores a strictly increasing abscissa grid with one
    non-decreasing ordinate column per DG, interpolated linearly.  For
    current-domain maps ``v_pcc`` records the voltage that scaled the axis.
    """

    form: str
    domain: tuple
    alpha: np.ndarray = None
    beta: np.ndarray = None
    grid: np.ndarray = None
    columns: np.ndarray = None
    v_pcc: float = None

    def __post_init__(self):
        lo, hi = self.domain
        if not lo < hi:
            raise ValidationError("map domain must satisfy lo < hi")
        if self.form in (AFFINE_IN_LOAD, AFFINE_IN_CURRENT):
            if self.alpha is None or self.beta is None:
                raise ValidationError("affine map needs alpha and beta")
            if len(self.alpha) != len(self.beta) or len(self.alpha) == 0:
                raise ValidationError("alpha and beta must share a nonzero length")
            scale = max(1.0, float(np.abs(self.beta).max()))
            if abs(float(self.beta.sum())) > 1e-9 * scale:
                raise ValidationError("affine map offsets must sum to zero")
            target = 1.0 if self.form == AFFINE_IN_LOAD else self.v_pcc
            if self.form == AFFINE_IN_CURRENT and not (self.v_pcc and self.v_pcc > 0):
                raise ValidationError("current-domain map needs v_pcc > 0")
            if abs(float(self.alpha.sum()) - target) > 1e-9 * max(1.0, target):
                raise ValidationError("affine map slopes must sum to the axis scale")
        elif self.form == TABULATED:
            if self.grid is None or self.columns is None:
                raise ValidationError("tabulated map needs grid and columns")
            if self.grid.ndim != 1 or len(self.grid) < 2:
                raise ValidationError("tabulated map needs at least two samples")
            if self.columns.shape[0] != len(self.grid):
                raise ValidationError("grid and columns row count differ")
            if not np.all(np.diff(self.grid) > 0):
                raise ValidationError("tabulated abscissae must be strictly increasing")
            col_scale = max(1.0, float(np.abs(self.columns).max()))
            if np.any(np.diff(self.columns, axis=0) < -1e-9 * col_scale):
                raise ValidationError("tabulated columns must be non-decreasing")
        else:
            raise ValidationError(f"unknown sharing map form {self.form!r}")

    @property
    def n(self) -> int:
        if self.form == TABULATED:
            return self.columns.shape[1]
        return len(self.alpha)

    @property
    def is_current_domain(self) -> bool:
        return self.form == AFFINE_IN_CURRENT or (
            self.form == TABULATED and self.v_pcc is not None
        )

    @property
    def limit_shares(self) -> np.ndarray:
        """Normalized shares in the large-argument limit (the slopes)."""
        if self.form == TABULATED:
            top = self.columns[-1]
            return top / top.sum()
        return self.alpha / self.alpha.sum()

    def evaluate(self, x: float) -> np.ndarray:
        """Per-DG share values at abscissa x (clamped into the domain for
        tabulated maps; affine maps extrapolate)."""
        if self.form == TABULATED:
            xc = min(max(x, float(self.grid[0])), float(self.grid[-1]))
            return np.array(
                [np.interp(xc, self.grid, self.columns[:, j]) for j in range(self.n)]
            )
        return self.alpha * x + self.beta


def build_load_map(
    costs, load_domain, samples: int = None, enforce_bounds: bool = False
) -> SharingMap:
    """Construct the optimal per-DG share of the total load over a domain.

    All-quadratic costs admit the exact affine closed form from the equal
    marginal cost condition; explicit sample counts, non-quadratic costs, or
    bound activity on the domain fall back to a table of dispatch solutions.
    """
    costs = list(costs)
    if not costs:
        raise ValidationError("at least one cost function is required")
    lo, hi = float(load_domain[0]), float(load_domain[1])
    if not lo < hi:
        raise ValidationError("load domain must satisfy lo < hi")
    if enforce_bounds:
        agg_min = sum(cf.p_min for cf in costs)
        agg_max = sum(cf.p_max for cf in costs)
        for end in (lo, hi):
            if not agg_min - 1e-9 <= end <= agg_max + 1e-9:
                raise InfeasibleLoadError(
                    f"load domain endpoint {end:g} W is outside the aggregate "
                    f"bounds [{agg_min:g}, {agg_max:g}] W"
                )

    quadratic = all(cf.a > 0.0 for cf in costs)
    if samples is None and quadratic:
        inv = np.array([1.0 / (2.0 * cf.a) for cf in costs])
        b = np.array([cf.b for cf in costs])
        alpha = inv / inv.sum()
        beta = inv * float(np.dot(b, inv)) / inv.sum() - b * inv
        affine_ok = True
        if enforce_bounds:
            for end in (lo, hi):
                xi = alpha * end + beta
                for cf, p in zip(costs, xi):
                    if p < cf.p_min - 1e-12 or p > cf.p_max + 1e-12:
                        affine_ok = False
        if affine_ok:
            return SharingMap(form=AFFINE_IN_LOAD, domain=(lo, hi), alpha=alpha, beta=beta)

    m = samples if samples is not None else DEFAULT_MAP_SAMPLES
    if m < 2:
        raise ValidationError("tabulated map needs at least two samples")
    grid = np.linspace(lo, hi, m)
    cols = np.empty((m, len(costs)))
    for k, x in enumerate(grid):
        cols[k] = solve_dispatch(costs, float(x), enforce_bounds=enforce_bounds).powers
    return SharingMap(form=TABULATED, domain=(lo, hi), grid=grid, columns=cols)


def to_current_domain(load_map: SharingMap, v_pcc: float) -> SharingMap:
    """Re-express a load-domain map over the common loop current via
    P_L = v_pcc * I, with the PCC voltage held at its rating.

    The lower domain endpoint is forced to at least MIN_CURRENT_A; the
    module voltages contain 1/I terms, so the map is not used below that.
    """
    if not v_pcc > 0.0:
        raise ValidationError("v_pcc must be positive")
    if load_map.is_current_domain:
        raise ValidationError("map is already in the current domain")
    lo = max(load_map.domain[0] / v_pcc, MIN_CURRENT_A)
    hi = load_map.domain[1] / v_pcc
    if not lo < hi:
        raise ValidationError("current domain collapsed; widen the load domain")
    if load_map.form == AFFINE_IN_LOAD:
        return SharingMap(
            form=AFFINE_IN_CURRENT,
            domain=(lo, hi),
            alpha=load_map.alpha * v_pcc,
            beta=load_map.beta.copy(),
            v_pcc=v_pcc,
        )
    return SharingMap(
        form=TABULATED,
        domain=(lo, hi),
        grid=load_map.grid / v_pcc,
        columns=load_map.columns.copy(),
        v_pcc=v_pcc,
    )


def write_map_csv(map_, path, lo: float = None, hi: float = None,
                  samples: int = DEFAULT_MAP_SAMPLES) -> None:
    """Sample a sharing map on a uniform axis and write x,g_1..g_n rows."""
    lo = map_.domain[0] if lo is None else lo
    hi = map_.domain[1] if hi is None else hi
    if not lo < hi:
        raise ValidationError("export range must satisfy lo < hi")
    xs = np.linspace(lo, hi, samples)
    header = "x," + ",".join(f"g_{j + 1}" for j in range(map_.n))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for x in xs:
            vals = map_.evaluate(float(x))
            fh.write(",".join(f"{v:.12e}" for v in (x, *vals)) + "\n")
