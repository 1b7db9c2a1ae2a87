"""Third-order induction motor in the synchronous network frame.

States are the transient EMF behind ``xprime`` (d = real axis, q = imaginary
axis) and the slip.  Electrical quantities are computed on the motor's own
MVA base; :func:`im_pq` converts the result to the 100 MVA system base.

The flux equations are written in per-unit time in their usual textbook form;
multiplying by the base angular frequency turns them into derivatives per
second.  The slip equation already uses seconds through ``h``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from ..errors import NoEquilibrium, ValidationError

OMEGA_BASE = 2 * np.pi * 60.0
SYSTEM_MVA_BASE = 100.0


@dataclass(frozen=True)
class ImParams:
    rs: float
    xs: float
    rr: float
    xr: float
    xm: float
    h: float
    tm0: float = 0.0
    mva_base: float = SYSTEM_MVA_BASE
    torque_exp: float = 2.0

    def __post_init__(self):
        for name in ("xs", "xr", "xm", "h"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ValidationError(f"induction motor {name} must be positive")

    @property
    def xprime(self):
        return self.xs + self.xm * self.xr / (self.xm + self.xr)

    @property
    def x0(self):
        return self.xs + self.xm


@dataclass(frozen=True)
class ImState:
    vdp: np.ndarray | float
    vqp: np.ndarray | float
    slip: np.ndarray | float

    @property
    def emf(self):
        return self.vdp + 1j * self.vqp

    def as_array(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (self.vdp, self.vqp, self.slip))))

    @classmethod
    def from_array(cls, x) -> "ImState":
        return cls(x[0], x[1], x[2])


def stator_current(imp: ImParams, st: ImState, u):
    """Complex stator current ``i_d + j i_q`` on the motor base."""
    return (u - st.emf) / (imp.rs + 1j * imp.xprime)


def im_derivatives(imp: ImParams, st: ImState, u) -> ImState:
    """Time derivatives (per second) of the motor states at bus voltage ``u``.

    Once the rotor is locked (slip >= 1) the slip is not allowed to grow any
    further.
    """
    i = stator_current(imp, st, u)
    i_d, i_q = i.real, i.imag
    a = imp.rr / (imp.xr + imp.xm)
    c = imp.xm**2 / (imp.xr + imp.xm)
    d_vdp = -a * (st.vdp + c * i_q) + st.slip * st.vqp
    d_vqp = -a * (st.vqp - c * i_d) - st.slip * st.vdp
    t_e = st.vdp * i_d + st.vqp * i_q
    t_m = imp.tm0 * (1 - st.slip) ** imp.torque_exp
    d_slip = (t_m - t_e) / (2 * imp.h)
    d_slip = np.where((np.asarray(st.slip) >= 1.0) & (d_slip > 0), 0.0, d_slip)
    return ImState(OMEGA_BASE * d_vdp, OMEGA_BASE * d_vqp, d_slip)


def im_jacobian(imp: ImParams, st: ImState, u) -> np.ndarray:
    """Analytic Jacobian of :func:`im_derivatives` w.r.t. ``(vdp, vqp, slip)``.

    Valid away from the locked-rotor clamp (slip < 1).  Shape ``(3, 3)`` plus
    any batch dimensions of the inputs.
    """
    i = stator_current(imp, st, u)
    i_d, i_q = i.real, i.imag
    y = 1 / (imp.rs + 1j * imp.xprime)
    g, b = y.real, y.imag
    a = imp.rr / (imp.xr + imp.xm)
    c = imp.xm**2 / (imp.xr + imp.xm)
    s, vd, vq = st.slip, st.vdp, st.vqp
    w, h2 = OMEGA_BASE, 2 * imp.h
    rows = [
        [w * (-a + a * c * b), w * (a * c * g + s), w * vq],
        [w * (-a * c * g - s), w * (-a + a * c * b), -w * vd],
        [
            -(i_d - vd * g - vq * b) / h2,
            -(i_q + vd * b - vq * g) / h2,
            -imp.tm0 * imp.torque_exp * (1 - s) ** (imp.torque_exp - 1) / h2,
        ],
    ]
    return np.array([np.broadcast_arrays(*r) for r in rows], dtype=float)


def im_pq_motor_base(imp: ImParams, st: ImState, u):
    ud, uq = np.real(u), np.imag(u)
    vd, vq = st.vdp, st.vqp
    xp, rs = imp.xprime, imp.rs
    den = rs**2 + xp**2
    in_phase = ud**2 + uq**2 - ud * vd - uq * vq
    cross = ud * vq - uq * vd
    p = (rs * in_phase - xp * cross) / den
    q = (xp * in_phase + rs * cross) / den
    return p, q


def im_pq(imp: ImParams, st: ImState, u):
    """Active and reactive consumption on the system base."""
    p, q = im_pq_motor_base(imp, st, u)
    scale = imp.mva_base / SYSTEM_MVA_BASE
    return p * scale, q * scale


# --------------------------------------------------------------------------
# steady state


def equilibrium_emf(imp: ImParams, u, slip):
    """EMF that zeroes both flux derivatives at the given slip and voltage."""
    a = imp.rr / (imp.xr + imp.xm)
    c = imp.xm**2 / (imp.xr + imp.xm)
    zs = imp.rs + 1j * imp.xprime
    return 1j * a * c * u / ((a + 1j * slip) * zs + 1j * a * c)


def steady_state_power(imp: ImParams, u, slip):
    """(P, Q, electrical torque) on the motor base at an equilibrium slip."""
    e = equilibrium_emf(imp, u, slip)
    i = (u - e) / (imp.rs + 1j * imp.xprime)
    s = u * np.conj(i)
    t_e = np.real(e * np.conj(i))
    return s.real, s.imag, t_e


def pullout_slip(imp: ImParams, u, n_grid: int = 200, n_refine: int = 60):
    """Slip in (0, 1] that maximises steady-state input power."""
    grid = np.linspace(1e-4, 1.0, n_grid)
    p_grid = np.stack(np.broadcast_arrays(*[steady_state_power(imp, u, s)[0] for s in grid]))
    k = np.argmax(p_grid, axis=0)
    lo = grid[np.maximum(k - 1, 0)]
    hi = grid[np.minimum(k + 1, n_grid - 1)]
    g = (np.sqrt(5) - 1) / 2
    for _ in range(n_refine):
        m1 = hi - g * (hi - lo)
        m2 = lo + g * (hi - lo)
        f1 = steady_state_power(imp, u, m1)[0]
        f2 = steady_state_power(imp, u, m2)[0]
        lo = np.where(f1 < f2, m1, lo)
        hi = np.where(f1 < f2, hi, m2)
    return 0.5 * (lo + hi)


def solve_slip(imp: ImParams, u, p_motor, iters: int = 80):
    """Smaller root of ``P(s) = p_motor`` (motor base), by bisection.

    Raises NoEquilibrium where the demand is above the pull-out power.
    """
    s_max = pullout_slip(imp, u)
    p_max = steady_state_power(imp, u, s_max)[0]
    p0 = steady_state_power(imp, u, 0.0)[0]
    p_motor = np.asarray(p_motor, dtype=float)
    bad = (p_motor > p_max) | (p_motor < p0)
    if np.any(bad):
        raise NoEquilibrium(
            f"load {np.max(np.atleast_1d(p_motor)):.4g} p.u. outside motor range "
            f"[{np.min(np.atleast_1d(p0)):.4g}, {np.min(np.atleast_1d(p_max)):.4g}] at |u|={np.min(np.abs(u)):.4g}"
        )
    lo = np.zeros_like(s_max)
    hi = s_max
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = steady_state_power(imp, u, mid)[0] < p_motor
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def init_motor_base(imp: ImParams, u, p_motor):
    """Equilibrium (tm0, state) for a motor drawing ``p_motor`` on its own base."""
    s = solve_slip(imp, u, p_motor)
    e = equilibrium_emf(imp, u, s)
    _, _, t_e = steady_state_power(imp, u, s)
    tm0 = t_e / (1 - s) ** imp.torque_exp
    return tm0, ImState(np.real(e), np.imag(e), s)


def im_init(imp: ImParams, v_terminal, p_target):
    """Equilibrium of a motor consuming ``p_target`` (system base) at ``v_terminal``.

    Returns ``(params, state)`` where ``params`` carries the mechanical
    torque base that balances the electrical torque.
    """
    if np.any(np.asarray(p_target) <= 0):
        raise ValidationError("p_target must be positive")
    p_motor = np.asarray(p_target) * SYSTEM_MVA_BASE / imp.mva_base
    tm0, st = init_motor_base(imp, v_terminal, p_motor)
    return dataclasses.replace(imp, tm0=tm0), st


def pullout_power(imp: ImParams, v_terminal):
    """Largest steady-state active power (system base) the motor can draw."""
    s = pullout_slip(imp, v_terminal)
    return steady_state_power(imp, v_terminal, s)[0] * imp.mva_base / SYSTEM_MVA_BASE
