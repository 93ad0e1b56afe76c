"""Numerical hot kernels shared by the plant, estimator and controller.

Everything here is scalar/ndarray code compiled with ``numba.njit`` when the
numba backend is active (see :mod:`glyctube.accel`).  The closed-loop engine
and the Monte Carlo layer both call these kernels, so a single implementation
defines the arithmetic for every execution path.
"""

import math

import numpy as np

from .accel import maybe_njit


@maybe_njit
def plant_rhs(g, x, i, sg, p2, p3, n, v, gb, ib, u, d):
    """Bergman three-state dynamics in deviation coordinates."""
    dg = -sg * g - x * (g + gb) + d
    dx = -p2 * x + p3 * i
    di = -n * (i + ib) + u / v
    return dg, dx, di


@maybe_njit
def meal_rate(t, starts, carbs, a_g, tau, dist_vol):
    """Total glucose appearance rate (mg/dL/min) from all past meal events."""
    total = 0.0
    for j in range(starts.shape[0]):
        s = t - starts[j]
        if s > 0.0:
            total += (1000.0 * carbs[j] * a_g / dist_vol) * s * math.exp(-s / tau) / (tau * tau)
    return total


@maybe_njit
def rk4_span(g, x, i, sg, p2, p3, n, v, gb, ib, u,
             starts, carbs, a_g, tau, dist_vol, t0, span, dt):
    """Integrate the plant over [t0, t0+span] with fixed-step RK4.

    The input u is held constant (zero-order hold); the meal disturbance is
    evaluated at each RK stage time.  Remote insulin action is clamped at zero
    after every substep to guard round-off.
    """
    n_sub = int(round(span / dt))
    h = span / n_sub
    t = t0
    for _ in range(n_sub):
        d1 = meal_rate(t, starts, carbs, a_g, tau, dist_vol)
        d2 = meal_rate(t + 0.5 * h, starts, carbs, a_g, tau, dist_vol)
        d4 = meal_rate(t + h, starts, carbs, a_g, tau, dist_vol)

        k1g, k1x, k1i = plant_rhs(g, x, i, sg, p2, p3, n, v, gb, ib, u, d1)
        k2g, k2x, k2i = plant_rhs(g + 0.5 * h * k1g, x + 0.5 * h * k1x, i + 0.5 * h * k1i,
                                  sg, p2, p3, n, v, gb, ib, u, d2)
        k3g, k3x, k3i = plant_rhs(g + 0.5 * h * k2g, x + 0.5 * h * k2x, i + 0.5 * h * k2i,
                                  sg, p2, p3, n, v, gb, ib, u, d2)
        k4g, k4x, k4i = plant_rhs(g + h * k3g, x + h * k3x, i + h * k3i,
                                  sg, p2, p3, n, v, gb, ib, u, d4)

        g += (h / 6.0) * (k1g + 2.0 * k2g + 2.0 * k3g + k4g)
        x += (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        i += (h / 6.0) * (k1i + 2.0 * k2i + 2.0 * k3i + k4i)
        if x < 0.0:
            x = 0.0
        t += h
    return g, x, i


@maybe_njit
def psi(s):
    """Cubic smoothstep clamped to [0, 1]: 0 for s<=0, 1 for s>=1."""
    if s <= 0.0:
        return 0.0
    if s >= 1.0:
        return 1.0
    return s * s * (3.0 - 2.0 * s)


PSI_MAX_SLOPE = 1.5  # derivative of 3s^2-2s^3 at s = 1/2


@maybe_njit
def funnel(p, q, mu, t):
    """Exponential funnel radius and its derivative at time t."""
    e = math.exp(-mu * t)
    rho = e * (p - q) + q
    rho_dot = -mu * (p - q) * e
    return rho, rho_dot


@maybe_njit
def gstc_core(g_hat, x_hat, i_hat, t,
              g_lower, g_upper, kappa1, kappa2, u_bar,
              p_x, q_x, mu_x, p_i, q_i, mu_i):
    """Three-stage cascade: estimates -> (u, diagnostics).

    Returns (u, e_g, e_x, e_i, x_ref, i_ref, rho_x, rho_i).
    """
    mid = 0.5 * (g_upper + g_lower)
    half = 0.5 * (g_upper - g_lower)
    e_g = (g_hat - mid) / half
    x_ref = kappa1 * psi(e_g)

    rho_x, _ = funnel(p_x, q_x, mu_x, t)
    e_x = (x_ref - x_hat) / rho_x
    i_ref = kappa2 * psi(e_x)

    rho_i, _ = funnel(p_i, q_i, mu_i, t)
    e_i = (i_ref - i_hat) / rho_i
    u = u_bar * psi(e_i)
    return u, e_g, e_x, e_i, x_ref, i_ref, rho_x, rho_i


@maybe_njit
def ekf_predict(x_hat, sigma, u, ts, sg, p2, p3, n, v, gb, ib, q_cov):
    """Euler prediction with nominal parameters and no meal term.

    Returns the a-priori estimate and covariance (new arrays).
    """
    g = x_hat[0]
    x = x_hat[1]
    i = x_hat[2]

    xp = np.empty(3)
    xp[0] = g + ts * (-sg * g - x * (g + gb))
    xp[1] = x + ts * (p3 * i - p2 * x)
    xp[2] = i + ts * (-n * (i + ib) + u / v)

    f = np.empty((3, 3))
    f[0, 0] = 1.0 - ts * (sg + x)
    f[0, 1] = -ts * (g + gb)
    f[0, 2] = 0.0
    f[1, 0] = 0.0
    f[1, 1] = 1.0 - ts * p2
    f[1, 2] = ts * p3
    f[2, 0] = 0.0
    f[2, 1] = 0.0
    f[2, 2] = 1.0 - ts * n

    sp = f @ sigma @ f.T + q_cov
    return xp, sp


@maybe_njit
def ekf_update(x_hat, sigma, z, gb, r):
    """Joseph-form measurement update with H = [1 0 0].

    Returns (estimate, covariance, innovation_variance); the caller must
    abort if the innovation variance is non-positive.
    """
    s = sigma[0, 0] + r
    if s <= 0.0:
        return x_hat, sigma, s

    nu = (z - gb) - x_hat[0]
    k = np.empty(3)
    k[0] = sigma[0, 0] / s
    k[1] = sigma[1, 0] / s
    k[2] = sigma[2, 0] / s

    xn = np.empty(3)
    xn[0] = x_hat[0] + k[0] * nu
    xn[1] = x_hat[1] + k[1] * nu
    xn[2] = x_hat[2] + k[2] * nu

    ikh = np.eye(3)
    ikh[0, 0] -= k[0]
    ikh[1, 0] -= k[1]
    ikh[2, 0] -= k[2]
    sn = ikh @ sigma @ ikh.T + r * np.outer(k, k)
    return xn, sn, s


@maybe_njit(nogil=True)
def run_gstc_loop(n_steps, ts, dt_plant,
                  g0, x0, i0,
                  sg, p2, p3, n, v, gb, ib,
                  nom_sg, nom_p2, nom_p3, nom_n, nom_v, nom_gb, nom_ib,
                  q_cov, r, xh0, sigma0,
                  g_lower, g_upper, kappa1, kappa2, u_bar,
                  p_x, q_x, mu_x, p_i, q_i, mu_i,
                  starts, carbs, a_g, tau, dist_vol,
                  noise, out):
    """Fused closed loop for the GSTC controller.

    One control step = CGM sample, EKF predict (with the previously applied
    input) + update, controller evaluation, ZOH plant integration.  The trace
    is written into ``out`` (n_steps x 21, engine column order).  Returns 0 on
    success, the failing step index + 1 on non-finite state.
    """
    g = g0
    x = x0
    i = i0
    xh = xh0.copy()
    sigma = sigma0.copy()
    u_prev = 0.0

    for k in range(n_steps):
        t = k * ts
        z = g + gb + noise[k]

        if k > 0:
            xh, sigma = ekf_predict(xh, sigma, u_prev, ts,
                                    nom_sg, nom_p2, nom_p3, nom_n,
                                    nom_v, nom_gb, nom_ib, q_cov)
        xh, sigma, s = ekf_update(xh, sigma, z, nom_gb, r)
        if s <= 0.0:
            return k + 1

        u, e_g, e_x, e_i, x_ref, i_ref, rho_x, rho_i = gstc_core(
            xh[0], xh[1], xh[2], t,
            g_lower, g_upper, kappa1, kappa2, u_bar,
            p_x, q_x, mu_x, p_i, q_i, mu_i)
        if u < 0.0:
            u = 0.0
        elif u > u_bar:
            u = u_bar

        d = meal_rate(t, starts, carbs, a_g, tau, dist_vol)

        out[k, 0] = t
        out[k, 1] = g
        out[k, 2] = g + gb
        out[k, 3] = z
        out[k, 4] = xh[0]
        out[k, 5] = x
        out[k, 6] = xh[1]
        out[k, 7] = i
        out[k, 8] = xh[2]
        out[k, 9] = x_ref
        out[k, 10] = i_ref
        out[k, 11] = rho_x
        out[k, 12] = rho_i
        out[k, 13] = e_g
        out[k, 14] = e_x
        out[k, 15] = e_i
        out[k, 16] = u
        out[k, 17] = d
        out[k, 18] = sigma[0, 0]
        out[k, 19] = sigma[1, 1]
        out[k, 20] = sigma[2, 2]

        g, x, i = rk4_span(g, x, i, sg, p2, p3, n, v, gb, ib, u,
                           starts, carbs, a_g, tau, dist_vol, t, ts, dt_plant)
        if not (math.isfinite(g) and math.isfinite(x) and math.isfinite(i)):
            return k + 1
        u_prev = u

    return 0
