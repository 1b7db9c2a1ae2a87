"""Drive a (batched) load model with a recorded voltage series.

This is the measurement-based view used for fitting: the substation voltage
is taken from the reference event and the model only has to reproduce the
power it would draw.  The voltage may be complex (magnitude and angle) or a
magnitude series, in which case the angle is held at zero.  Between samples
magnitude and unwrapped angle are linearly interpolated,
except across a known switching instant: a sample recorded at an event time
holds the post-event value, so the interval leading up to it is held at the
pre-event voltage instead.
"""
from __future__ import annotations

import numpy as np

from .composite import LoadInstance, instantiate


def playback(model, times, voltage, p0, q0, event_times=(), substeps: int = 1):
    """Simulate ``model`` under the (complex or magnitude) series ``voltage``.

    ``p0, q0`` is the consumption at ``voltage[0]`` the model is initialised to.
    Returns ``(p, q)`` with shape ``(T,)`` or ``(m, T)`` for batched models;
    samples whose integration blows up come back as NaN.
    """
    inst = instantiate(model, complex(voltage[0]), p0, q0)
    return playback_instance(inst, times, voltage, event_times=event_times, substeps=substeps)


def playback_instance(inst: LoadInstance, times, voltage, event_times=(), substeps: int = 1):
    times = np.asarray(times, dtype=float)
    voltage = np.asarray(voltage)
    v_mag = np.abs(voltage)
    v_ang = np.unwrap(np.angle(voltage)) if np.iscomplexobj(voltage) else np.zeros(len(times))
    n = len(times)
    jumps = np.zeros(n, dtype=bool)
    for te in event_times:
        jumps |= np.isclose(times, te, atol=1e-9, rtol=0)
    x = np.asarray(inst.x0, dtype=float)
    d = inst.d0
    guess = [None]

    def solve(v_sub, x, d):
        if inst.feeder is None:
            return v_sub
        ve = inst.end_voltage(x, d, v_sub, guess=guess[0], strict=False)
        guess[0] = ve
        return ve

    def deriv(x, d, v):
        return inst.end_derivatives(x, d, solve(v, x, d))

    p_out, q_out = [], []
    with np.errstate(all="ignore"):
        v0 = complex(voltage[0])
        p, q = inst.injection(x, d, v0, v_end=solve(v0, x, d))
        p_out.append(p)
        q_out.append(q)
        for k in range(1, n):
            h = (times[k] - times[k - 1]) / substeps
            ma, aa = v_mag[k - 1], v_ang[k - 1]
            mb, ab = (ma, aa) if jumps[k] else (v_mag[k], v_ang[k])

            def at(frac):
                return (ma + (mb - ma) * frac) * np.exp(1j * (aa + (ab - aa) * frac))

            for j in range(substeps):
                fa = j / substeps
                v1, vm, v2 = at(fa), at(fa + 0.5 / substeps), at(fa + 1.0 / substeps)
                if x.size:
                    k1 = deriv(x, d, v1)
                    k2 = deriv(x + 0.5 * h * k1, d, vm)
                    k3 = deriv(x + 0.5 * h * k2, d, vm)
                    k4 = deriv(x + h * k3, d, v2)
                    x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                d = inst.update_discrete(d, solve(v2, x, d), h)
            vk = complex(voltage[k]) if np.iscomplexobj(voltage) else complex(v_mag[k])
            p, q = inst.injection(x, d, vk, v_end=solve(vk, x, d))
            p_out.append(p)
            q_out.append(q)
    p = np.stack(np.broadcast_arrays(*p_out), axis=-1)
    q = np.stack(np.broadcast_arrays(*q_out), axis=-1)
    return p, q
