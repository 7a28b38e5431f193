"""Decentralized control laws mapping local measurements to commands.

Each DG reads only its own filtered power and the common loop current;
frequency synchronization does the coordination.  The economical law uses
the optimal sharing map, the baseline shares in proportion to ratings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dispatch import MIN_CURRENT_A, SharingMap
from .errors import DegenerateSharingError, ValidationError


@dataclass(frozen=True)
class ControllerParams:
    """Shared controller constants plus the sharing source.

    ``sharing`` is either a current-domain SharingMap (economical scheme)
    or a fixed weight vector summing to one (proportional scheme).  The
    frequency law works on power in per-unit of ``p_base`` so the droop
    band stays inside [f_min, f_max].
    """

    f_min: float
    f_max: float
    h: float
    v_pcc_ref: float
    w_c: float
    p_base: float
    sharing: object = None

    def __post_init__(self):
        if not self.f_min < self.f_max:
            raise ValidationError("f_min must be below f_max")
        if not self.h > 0.0:
            raise ValidationError("h must be positive")
        if not self.w_c > 0.0:
            raise ValidationError("w_c must be positive")
        if not self.v_pcc_ref > 0.0:
            raise ValidationError("v_pcc_ref must be positive")
        if not self.p_base > 0.0:
            raise ValidationError("p_base must be positive")
        if isinstance(self.sharing, SharingMap):
            if not self.sharing.is_current_domain:
                raise ValidationError("controller needs a current-domain sharing map")
        elif self.sharing is not None:
            w = np.asarray(self.sharing, dtype=float)
            if w.ndim != 1 or not np.all(np.isfinite(w)) or not np.all(w > 0.0):
                raise ValidationError("weights must be positive and finite")
            if abs(float(w.sum()) - 1.0) > 1e-9:
                raise ValidationError("weights must be normalized to sum 1")
            object.__setattr__(self, "sharing", w)


@dataclass(frozen=True)
class ControlCommand:
    frequency: float
    voltage_magnitude: float
    saturated: bool


def proportional_weights(ratings) -> np.ndarray:
    """Rating-proportional weights, normalized to sum 1."""
    r = np.asarray(ratings, dtype=float)
    if r.ndim != 1 or r.size == 0 or not np.all(np.isfinite(r)) or not np.all(r > 0):
        raise ValidationError("ratings must be positive and finite")
    return r / r.sum()


def sharing_coefficients(sharing_map: SharingMap, current_mag: float) -> np.ndarray:
    """Normalized shares g_i(I) / sum_j g_j(I) at the measured current.

    Below MIN_CURRENT_A the 1/I voltage terms blow up, so the slope-limit
    shares are substituted instead.
    """
    if not current_mag >= 0.0:
        raise ValidationError("current magnitude must be non-negative")
    if not sharing_map.is_current_domain:
        raise ValidationError("sharing map must be in the current domain")
    if current_mag < MIN_CURRENT_A:
        shares = sharing_map.limit_shares
        return shares / shares.sum()
    x = min(max(current_mag, sharing_map.domain[0]), sharing_map.domain[1])
    g = sharing_map.evaluate(x)
    s = float(g.sum())
    if s <= 0.0:
        raise DegenerateSharingError(
            f"sharing map sums to {s:g} W at {current_mag:g} A"
        )
    return g / s


def _droop_command(share: float, p_filtered: float, params: ControllerParams) -> ControlCommand:
    f_raw = params.f_min + (params.h / share) * (p_filtered / params.p_base)
    f_cmd = min(max(f_raw, params.f_min), params.f_max)
    return ControlCommand(
        frequency=f_cmd,
        voltage_magnitude=share * params.v_pcc_ref,
        saturated=f_cmd != f_raw,
    )


def economical_command(phi_i: float, p_filtered: float, params: ControllerParams) -> ControlCommand:
    """Frequency rises with filtered power scaled by 1/phi_i; the module
    voltage is the phi_i fraction of the PCC reference."""
    if not phi_i > 0.0:
        raise DegenerateSharingError(f"sharing coefficient {phi_i:g} is not positive")
    if phi_i > 1.0 + 1e-9:
        raise ValidationError("sharing coefficient cannot exceed 1")
    return _droop_command(phi_i, p_filtered, params)


def proportional_command(weight_i: float, p_filtered: float, params: ControllerParams) -> ControlCommand:
    """Same law with a constant rating-proportional weight instead of the
    current-dependent share."""
    if not weight_i > 0.0:
        raise DegenerateSharingError(f"weight {weight_i:g} is not positive")
    if weight_i > 1.0 + 1e-9:
        raise ValidationError("weight cannot exceed 1")
    return _droop_command(weight_i, p_filtered, params)


def filter_step(p_raw, q_raw, p_f, q_f, w_c: float, dt: float):
    """Time derivatives of the first-order power filters.

    Returns derivatives, not integrated values; the simulator owns the
    integration.  dt only guards the explicit-update stability margin.
    """
    if not dt > 0.0:
        raise ValidationError("dt must be positive")
    if not w_c * dt < 1.0:
        raise ValidationError("w_c * dt must stay below 1 for a stable update")
    if not (math.isfinite(w_c) and w_c > 0.0):
        raise ValidationError("w_c must be positive and finite")
    return (p_raw - p_f) * w_c, (q_raw - q_f) * w_c
