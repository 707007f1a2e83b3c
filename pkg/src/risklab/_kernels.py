"""Hot loops over padded bag arrays, in numba and pure numpy.

Both backends are always importable as ``*_numpy`` / ``*_numba`` (the latter
only when numba is installed). The unsuffixed names dispatch to numba
unless ``RISKLAB_DISABLE_NUMBA`` is set to a non-empty value other than
``0``, or numba is missing.

Array conventions (J bags, K padded slots):
    tau, atten: float64 (J, K)
    level: int64 (J, K), values 1..3
    mask: bool (J, K), True for visible real exposures
    bounds: float64 (5,), [0, theta1, theta2, theta3, 100]
    ble_w: float64 (4,), bucket 1 = lowest attenuation
    con_w: float64 (3,), indexed by level - 1
"""

import math
import os

import numpy as np
from scipy.special import expit

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

_flag = os.environ.get("RISKLAB_DISABLE_NUMBA", "")
USE_NUMBA = HAS_NUMBA and _flag in ("", "0")
BACKEND = "numba" if USE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# numpy
# --------------------------------------------------------------------------

def hard_bag_risk_numpy(tau, atten, level, mask, bounds, ble_w, con_w):
    bucket = np.searchsorted(bounds[1:4], atten, side="left")
    r = tau * ble_w[bucket] * con_w[level - 1]
    return np.where(mask, r, 0.0).sum(axis=1)


def soft_bucket_mass_numpy(atten, bounds, temp):
    """Soft membership of each attenuation in each of the 4 buckets, shape (..., 4)."""
    a = np.asarray(atten, dtype=float)[..., None]
    return expit(temp * (a - bounds[:4])) * expit(temp * (bounds[1:] - a))


def loss_grad_numpy(tau, atten, level, mask, labels, bounds, ble_w, con_w, mu, temp, clamp):
    """Mean BCE over bags and its gradient.

    Returns ``(loss, g_theta[3], g_ble_w[4], g_con_w[3], g_mu)``.
    """
    a = atten[..., None]
    u_lo = expit(temp * (a - bounds[:4]))
    u_hi = expit(temp * (bounds[1:] - a))
    S = u_lo * u_hi
    fble = S @ ble_w
    c = con_w[level - 1]
    tm = np.where(mask, tau, 0.0)
    r = tm * fble * c
    R = r.sum(axis=1)
    x = mu * R
    q = -np.expm1(-x)
    lo_clamp = q < clamp
    hi_clamp = q > 1.0 - clamp
    qc = np.clip(q, clamp, 1.0 - clamp)
    log_q = np.log(qc)
    log_1mq = np.where(hi_clamp | lo_clamp, np.log1p(-qc), -x)
    y = labels
    losses = -(y * log_q + (1.0 - y) * log_1mq)
    dldx = np.where(lo_clamp | hi_clamp, 0.0, -y * np.exp(-x) / np.where(lo_clamp, 1.0, qc) + (1.0 - y))

    n = len(labels)
    g_mu = float((dldx * R).sum()) / n
    dldr = (dldx * mu)[:, None] / n
    base = dldr * tm
    g_con = np.zeros(3)
    for lvl in (2, 3):
        g_con[lvl - 1] = float((base * fble * (level == lvl)).sum())
    bc = base * c
    g_w = np.einsum("jk,jkb->b", bc, S)
    g_theta = np.zeros(3)
    for k in range(1, 4):
        d_upper = u_lo[..., k - 1] * temp * u_hi[..., k - 1] * (1.0 - u_hi[..., k - 1])
        d_lower = -temp * u_lo[..., k] * (1.0 - u_lo[..., k]) * u_hi[..., k]
        g_theta[k - 1] = float((bc * (ble_w[k - 1] * d_upper + ble_w[k] * d_lower)).sum())
    return float(losses.mean()), g_theta, g_w, g_con, g_mu


# --------------------------------------------------------------------------
# numba
# --------------------------------------------------------------------------

if HAS_NUMBA:

    @numba.njit(cache=True)
    def _sig(x):
        if x >= 0.0:
            return 1.0 / (1.0 + math.exp(-x))
        e = math.exp(x)
        return e / (1.0 + e)

    @numba.njit(cache=True)
    def hard_bag_risk_numba(tau, atten, level, mask, bounds, ble_w, con_w):
        J, K = tau.shape
        out = np.zeros(J)
        for j in range(J):
            acc = 0.0
            for k in range(K):
                if not mask[j, k]:
                    continue
                a = atten[j, k]
                b = 3
                if a <= bounds[1]:
                    b = 0
                elif a <= bounds[2]:
                    b = 1
                elif a <= bounds[3]:
                    b = 2
                acc += tau[j, k] * ble_w[b] * con_w[level[j, k] - 1]
            out[j] = acc
        return out

    @numba.njit(cache=True)
    def soft_bucket_mass_numba(atten, bounds, temp):
        flat = atten.ravel()
        out = np.empty((flat.size, 4))
        for i in range(flat.size):
            for b in range(4):
                out[i, b] = _sig(temp * (flat[i] - bounds[b])) * _sig(temp * (bounds[b + 1] - flat[i]))
        return out

    @numba.njit(cache=True)
    def loss_grad_numba(tau, atten, level, mask, labels, bounds, ble_w, con_w, mu, temp, clamp):
        J, K = tau.shape
        u_lo = np.empty(4)
        u_hi = np.empty(4)
        g_theta = np.zeros(3)
        g_w = np.zeros(4)
        g_con = np.zeros(3)
        g_mu = 0.0
        total = 0.0
        for j in range(J):
            R = 0.0
            for k in range(K):
                if not mask[j, k]:
                    continue
                a = atten[j, k]
                f = 0.0
                for b in range(4):
                    f += _sig(temp * (a - bounds[b])) * _sig(temp * (bounds[b + 1] - a)) * ble_w[b]
                R += tau[j, k] * f * con_w[level[j, k] - 1]
            x = mu * R
            q = -math.expm1(-x)
            y = labels[j]
            if q < clamp or q > 1.0 - clamp:
                qc = min(max(q, clamp), 1.0 - clamp)
                total += -(y * math.log(qc) + (1.0 - y) * math.log1p(-qc))
                continue
            total += -(y * math.log(q) - (1.0 - y) * x)
            dldx = -y * math.exp(-x) / q + (1.0 - y)
            g_mu += dldx * R
            dldr = dldx * mu
            for k in range(K):
                if not mask[j, k]:
                    continue
                a = atten[j, k]
                lv = level[j, k] - 1
                c = con_w[lv]
                f = 0.0
                for b in range(4):
                    u_lo[b] = _sig(temp * (a - bounds[b]))
                    u_hi[b] = _sig(temp * (bounds[b + 1] - a))
                    f += u_lo[b] * u_hi[b] * ble_w[b]
                base = dldr * tau[j, k]
                g_con[lv] += base * f
                bc = base * c
                for b in range(4):
                    g_w[b] += bc * u_lo[b] * u_hi[b]
                for t in range(1, 4):
                    d_upper = u_lo[t - 1] * temp * u_hi[t - 1] * (1.0 - u_hi[t - 1])
                    d_lower = -temp * u_lo[t] * (1.0 - u_lo[t]) * u_hi[t]
                    g_theta[t - 1] += bc * (ble_w[t - 1] * d_upper + ble_w[t] * d_lower)
        g_con[0] = 0.0
        n = float(J)
        return total / n, g_theta / n, g_w / n, g_con / n, g_mu / n


if USE_NUMBA:
    hard_bag_risk = hard_bag_risk_numba
    loss_grad = loss_grad_numba

    def soft_bucket_mass(atten, bounds, temp):
        a = np.asarray(atten, dtype=np.float64)
        return soft_bucket_mass_numba(a, np.asarray(bounds, dtype=np.float64), float(temp)).reshape(
            a.shape + (4,)
        )
else:
    hard_bag_risk = hard_bag_risk_numpy
    loss_grad = loss_grad_numpy
    soft_bucket_mass = soft_bucket_mass_numpy
