"""Voltage-dependent static loads: ZIP polynomial, electronic load, single-phase motor.

All functions broadcast over numpy arrays so the fitting code can evaluate a
batch of sampled parameter sets in one call.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError

FRACTION_TOL = 1e-9


def check_simplex(fractions, name="fractions"):
    f = np.stack(np.broadcast_arrays(*[np.asarray(x, dtype=float) for x in fractions]))
    if np.any(f < -FRACTION_TOL) or np.any(f > 1 + FRACTION_TOL):
        raise ValidationError(f"{name} must lie in [0, 1]: {f.tolist()}")
    if np.any(np.abs(f.sum(axis=0) - 1.0) > FRACTION_TOL):
        raise ValidationError(f"{name} must sum to one: {f.tolist()}")


@dataclass(frozen=True)
class ZipParams:
    """Constant-impedance / current / power split of a static load.

    ``v_break`` > 0 turns the constant-current and constant-power parts into
    constant impedance below that voltage, which keeps network solves
    well-posed during close-in faults.  With the default of zero the
    polynomial is used at every voltage.
    """

    p0: float
    q0: float
    v0: float = 1.0
    p1c: float = 1.0
    p2c: float = 0.0
    p3c: float = 0.0
    q1c: float = 1.0
    q2c: float = 0.0
    q3c: float = 0.0
    v_break: float = 0.0

    def __post_init__(self):
        check_simplex([self.p1c, self.p2c, self.p3c], "ZIP p-coefficients")
        check_simplex([self.q1c, self.q2c, self.q3c], "ZIP q-coefficients")

    @classmethod
    def from_fractions(cls, p0, q0, p_frac, q_frac, v0=1.0, v_break=0.0):
        return cls(p0, q0, v0, *p_frac, *q_frac, v_break=v_break)


def _zip_shape(c1, c2, c3, vr, vb):
    if np.ndim(vr) == 0 and np.ndim(vb) == 0 and np.ndim(c1) == 0:
        vr, vb = float(vr), float(vb)
        if vb <= 0 or vr >= vb:
            return c1 * vr * vr + c2 * vr + c3
        return c1 * vr * vr + (c2 * vb + c3) * (vr / vb) ** 2
    shape = c1 * vr**2 + c2 * vr + c3
    if np.all(np.asarray(vb) <= 0):
        return shape
    vb = np.where(np.asarray(vb) > 0, vb, 1.0)
    low = c1 * vr**2 + (c2 * vb + c3) * (vr / vb) ** 2
    return np.where(vr < vb, low, shape)


def zip_pq(zp: ZipParams, v):
    """Active and reactive consumption of a ZIP load at voltage magnitude ``v``."""
    vr = np.asarray(v) / zp.v0
    vb = np.asarray(zp.v_break) / zp.v0
    p = zp.p0 * _zip_shape(zp.p1c, zp.p2c, zp.p3c, vr, vb)
    q = zp.q0 * _zip_shape(zp.q1c, zp.q2c, zp.q3c, vr, vb)
    return p, q


@dataclass(frozen=True)
class ElectronicLoadParams:
    p0: float
    q0: float = 0.0
    v_full: float = 0.7
    v_off: float = 0.5

    def __post_init__(self):
        if np.any(np.asarray(self.v_off) >= np.asarray(self.v_full)):
            raise ValidationError("electronic load needs v_off < v_full")
        if np.any(np.asarray(self.q0) != 0):
            raise ValidationError("electronic load runs at unity power factor (q0 = 0)")


def electronic_pq(ep: ElectronicLoadParams, v):
    """Piece-wise linear power-electronic load, unity power factor."""
    if np.ndim(v) == 0 and np.ndim(ep.v_off) == 0:
        ramp = min(max((float(v) - ep.v_off) / (ep.v_full - ep.v_off), 0.0), 1.0)
        return ep.p0 * ramp, 0.0 * ep.p0
    v = np.asarray(v, dtype=float)
    ramp = np.clip((v - ep.v_off) / (ep.v_full - ep.v_off), 0.0, 1.0)
    p = ep.p0 * ramp
    return p, np.zeros_like(p)


@dataclass(frozen=True)
class SinglePhaseImParams:
    """Rule-based residential compressor motor (run / stall / partial restart).

    ``g_stall`` and ``b_stall`` are the stalled admittance on the system
    base: a stalled unit draws ``(g_stall + j b_stall) v**2``.
    """

    p0: float
    q0: float
    v_stall: float = 0.55
    t_stall: float = 0.033
    g_stall: float = 4.4
    b_stall: float = 4.0
    f_restart: float = 0.2
    v_restart: float = 0.95
    v_break: float = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.f_restart) < 0) or np.any(np.asarray(self.f_restart) > 1):
            raise ValidationError("f_restart must lie in [0, 1]")
        if np.any(np.asarray(self.v_stall) >= np.asarray(self.v_restart)):
            raise ValidationError("single-phase motor needs v_stall < v_restart")


@dataclass(frozen=True)
class SpImState:
    """Discrete state of the compressor population.

    ``running`` is the fraction of units running, ``timer`` the time spent
    continuously below ``v_stall``, ``restarted`` whether the one-shot
    restart already happened.
    """

    running: np.ndarray | float = 1.0
    timer: np.ndarray | float = 0.0
    restarted: np.ndarray | bool = False


def sp_im_pq(sp: SinglePhaseImParams, st: SpImState, v):
    if np.ndim(v) == 0 and np.ndim(sp.v_break) == 0 and np.ndim(st.running) == 0:
        v, vb, r = float(v), float(sp.v_break), float(st.running)
        shape = (v / vb) ** 2 if 0 < vb and v < vb else 1.0
        return (r * sp.p0 * shape + (1 - r) * sp.g_stall * v * v,
                r * sp.q0 * shape + (1 - r) * sp.b_stall * v * v)
    v = np.asarray(v, dtype=float)
    run_shape = np.ones_like(v)
    if np.any(np.asarray(sp.v_break) > 0):
        vb = np.where(np.asarray(sp.v_break) > 0, sp.v_break, 1.0)
        run_shape = np.where(v < vb, (v / vb) ** 2, 1.0)
    r = st.running
    p = r * sp.p0 * run_shape + (1 - r) * sp.g_stall * v**2
    q = r * sp.q0 * run_shape + (1 - r) * sp.b_stall * v**2
    return p, q


def sp_im_update(sp: SinglePhaseImParams, st: SpImState, v, dt: float):
    """Advance the stall/restart rules by ``dt`` at voltage ``v``.

    Returns ``(new_state, p, q)`` with the injection evaluated after the
    update.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    v = np.asarray(v, dtype=float)
    running = np.asarray(st.running, dtype=float)
    restarted = np.asarray(st.restarted, dtype=bool)
    below = v < sp.v_stall
    timer = np.where(below & (running > 0), np.asarray(st.timer) + dt, 0.0)
    stall_now = timer >= np.asarray(sp.t_stall) - 1e-12
    running = np.where(stall_now, 0.0, running)
    timer = np.where(stall_now, 0.0, timer)
    restart_now = (running < 1.0) & ~restarted & (v > sp.v_restart)
    running = np.where(restart_now, running + np.asarray(sp.f_restart) * (1.0 - running), running)
    restarted = restarted | restart_now
    new = SpImState(running=running, timer=timer, restarted=restarted)
    p, q = sp_im_pq(sp, new, v)
    return new, p, q
