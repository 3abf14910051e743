"""Nonlinear least-squares fitting of the decay-time laws.

Decay times versus coherence order follow saturating hyperbolic laws:
``a1 * coth(a2*k + a3)`` for the standard experiment and
``a + b * tanh(d - c*k)`` for the perturbed one.  Both objectives have local
minima, so fits run a damped Gauss-Newton (Levenberg-Marquardt) iteration
from a fixed 27-point grid of starting guesses and keep the best result.
Everything is deterministic: no randomness, fixed start grid, fixed
iteration policy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FitResult:
    model: str
    parameters: tuple
    residual: float          # sum of squared residuals
    converged: bool
    rss_history: tuple = ()  # accepted-step objective values, non-increasing


def coth_model(k, params):
    a1, a2, a3 = params
    u = a2 * k + a3
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return a1 / np.tanh(u)


def _coth_jacobian(k, params):
    a1, a2, a3 = params
    u = a2 * k + a3
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        coth_u = 1.0 / np.tanh(u)
        csch2 = 1.0 / np.sinh(u) ** 2
    return np.column_stack([coth_u, -a1 * k * csch2, -a1 * csch2])


def tanh_model(k, params):
    a, b, c, d = params
    return a + b * np.tanh(d - c * k)


def _tanh_jacobian(k, params):
    a, b, c, d = params
    v = d - c * k
    th = np.tanh(v)
    sech2 = 1.0 - th**2
    return np.column_stack([np.ones_like(k), th, -b * k * sech2, b * sech2])


def levenberg_marquardt(
    model,
    jacobian,
    x,
    y,
    p0,
    max_iter: int = 200,
    ftol: float = 1e-14,
    xtol: float = 1e-12,
):
    """Damped least squares for y ~ model(x, params).

    Steps solve (J^T J + lam * diag(J^T J)) dp = J^T r and are accepted only
    if they reduce the objective, so the history of accepted objective
    values never increases.  Returns (params, rss, converged, history).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    params = np.array(p0, dtype=float)
    r = y - model(x, params)
    if not np.all(np.isfinite(r)):
        return params, np.inf, False, (np.inf,)
    rss = float(r @ r)
    history = [rss]
    lam = 1e-3
    for _ in range(max_iter):
        jac = jacobian(x, params)
        if not np.all(np.isfinite(jac)):
            return params, rss, False, tuple(history)
        jtj = jac.T @ jac
        g = jac.T @ r
        accepted = False
        while lam <= 1e14:
            damped = jtj + lam * np.diag(np.maximum(np.diag(jtj), 1e-30))
            try:
                dp = np.linalg.solve(damped, g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = params + dp
            r_trial = y - model(x, trial)
            rss_trial = float(r_trial @ r_trial) if np.all(np.isfinite(r_trial)) else np.inf
            if rss_trial < rss:
                accepted = True
                rel_drop = (rss - rss_trial) / max(rss, 1e-300)
                step_small = float(np.max(np.abs(dp) / np.maximum(np.abs(params), 1e-12))) < xtol
                params, r, rss = trial, r_trial, rss_trial
                history.append(rss)
                lam = max(lam / 3.0, 1e-12)
                if rel_drop < ftol or step_small:
                    return params, rss, True, tuple(history)
                break
            lam *= 4.0
        if not accepted:
            # No damping produces a descent step: a numerical stationary
            # point.  Report success only if the iteration made progress.
            return params, rss, len(history) > 1, tuple(history)
    return params, rss, False, tuple(history)


def _best_multistart(model, jacobian, x, y, starts, name):
    best = None
    for p0 in starts:
        params, rss, conv, hist = levenberg_marquardt(model, jacobian, x, y, p0)
        if not np.all(np.isfinite(params)):
            continue
        if best is None or rss < best[1]:
            best = (params, rss, conv, hist)
    if best is None:
        return FitResult(name, tuple(float(v) for v in starts[0]), np.inf, False)
    params, rss, conv, hist = best
    return FitResult(name, tuple(float(v) for v in params), rss, conv, hist)


def fit_coth(k_values, t_values) -> FitResult:
    """Least-squares fit of t_e(k) = a1 * coth(a2*k + a3).

    Requires at least four strictly positive orders.  Start guesses scan a
    3 x 3 x 3 grid around data-driven scales: a1 from the large-k plateau,
    a2 from the small-k hyperbolic rise, a3 around zero.
    """
    k = np.asarray(k_values, dtype=float)
    t = np.asarray(t_values, dtype=float)
    if k.size < 4:
        raise ValueError("need at least 4 points for the 3-parameter fit")
    if np.any(k <= 0):
        raise ValueError("coherence orders must be positive")
    a1_scale = float(np.min(t))
    a2_scale = a1_scale / max(float(t[np.argmin(k)]) * float(np.min(k)), 1e-300)
    starts = [
        (a1_scale * f1, a2_scale * f2, a3)
        for f1 in (0.5, 1.0, 2.0)
        for f2 in (0.5, 1.0, 2.0)
        for a3 in (-0.1, 0.0, 0.1)
    ]
    return _best_multistart(coth_model, _coth_jacobian, k, t, starts, "coth")


def fit_tanh(k_values, tau_values) -> FitResult:
    """Least-squares fit of tau_p(k) = a + b * tanh(d - c*k)."""
    k = np.asarray(k_values, dtype=float)
    t = np.asarray(tau_values, dtype=float)
    if k.size < 4:
        raise ValueError("need at least 4 points for the 4-parameter fit")
    a0 = 0.5 * (float(np.max(t)) + float(np.min(t)))
    b_scale = max(0.5 * (float(np.max(t)) - float(np.min(t))), 1e-12)
    k_span = max(float(np.max(k)) - float(np.min(k)), 1.0)
    c_scale = 2.0 / k_span
    k_mid = 0.5 * (float(np.max(k)) + float(np.min(k)))
    starts = [
        (a0, b_scale * fb, c_scale * fc, c_scale * fc * k_mid * fd)
        for fb in (0.5, 1.0, 2.0)
        for fc in (0.5, 1.0, 2.0)
        for fd in (0.5, 1.0, 2.0)
    ]
    return _best_multistart(tanh_model, _tanh_jacobian, k, t, starts, "tanh")
