"""Optimization-based reconstruction: whitened least squares with Huber-TV
and Tikhonov terms, nonnegativity projection, FISTA iterations.

Minimizes  0.5*||W(Ax - psi)||^2 + lambda*TV_delta(x) + 0.5*mu*||x||^2
subject to x >= 0.  The Huber-smoothed TV is handled by its gradient, the
step is 1/L from a power-iteration estimate of ||A||, and a monotone
safeguard (reject-and-restart) keeps the objective trace non-increasing.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .forward import Spectra, adjoint_operator, forward_operator
from .volume import Volume


@dataclass
class IterConfig:
    """FISTA solver parameters.

    ``whitening`` is an optional per-entry real weight array matching the
    spectra shape; ``discrepancy_target`` stops once the squared whitened
    residual falls to the expected noise energy.
    """

    lambda_tv: float = 0.0
    mu_tik: float = 0.0
    huber_delta: float = 0.01
    max_iters: int = 100
    rel_obj_tol: float = 1e-3
    whitening: np.ndarray = None
    warm_start: str = "ubp"          # 'ubp' or 'zero'
    power_iters: int = 20
    power_seed: int = 0
    discrepancy_target: float = None
    nonneg: bool = True
    op_norm: float = None            # reuse a precomputed ||A|| estimate
    threads: int = 1

    def __post_init__(self):
        if self.lambda_tv < 0 or self.mu_tik < 0:
            raise ValueError("regularization weights must be >= 0")
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive")
        if self.power_iters < 3:
            raise ValueError("power_iters must be >= 3")
        if self.warm_start not in ("ubp", "zero"):
            raise ValueError("warm_start must be 'ubp' or 'zero'")


def estimate_op_norm(forward, adjoint, grid, iters=20, seed=0):
    """Power iteration on A^H A; returns an estimate of ||A||_2.

    ``forward`` maps a float64 voxel vector to anything supporting a
    squared-norm via ``_sq_norm``; ``adjoint`` maps that output back to a
    voxel vector.  The Rayleigh estimate is non-decreasing in exact
    arithmetic.
    """
    if isinstance(grid, Volume):
        grid = grid.grid
    if iters < 3:
        raise ValueError("power iteration needs at least 3 steps")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(grid.n_voxels)
    nv = _vec_norm(v)
    if nv == 0.0:
        return 0.0
    v /= nv
    est = 0.0
    for _ in range(iters):
        w = adjoint(forward(v))
        nw = _vec_norm(w)
        if nw == 0.0:
            return 0.0
        # Rayleigh quotient of A^H A at the unit vector v.
        est = np.sqrt(abs(float(np.einsum("i,i->", v, w))))
        v = w / nw
    return float(est)


def tv_huber(x, delta):
    """Isotropic Huber-TV value and gradient of a volume (or raw 3D array).

    Forward differences with replicate boundary; phi_delta(s) = s^2/(2 delta)
    for s <= delta and s - delta/2 beyond.  The gradient is the exact
    analytic adjoint of the difference stencil.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    arr = x.data.astype(np.float64) if isinstance(x, Volume) else np.asarray(x, dtype=np.float64)
    dx = np.zeros_like(arr)
    dy = np.zeros_like(arr)
    dz = np.zeros_like(arr)
    dx[:-1, :, :] = arr[1:, :, :] - arr[:-1, :, :]
    dy[:, :-1, :] = arr[:, 1:, :] - arr[:, :-1, :]
    dz[:, :, :-1] = arr[:, :, 1:] - arr[:, :, :-1]
    mag = np.sqrt(dx * dx + dy * dy + dz * dz)
    small = mag <= delta
    value = float(np.sum(np.where(small, mag * mag / (2.0 * delta), mag - delta / 2.0)))
    # d phi / d mag divided by mag: 1/delta inside the quadratic region, 1/mag outside.
    with np.errstate(divide="ignore"):
        ratio = np.where(small, 1.0 / delta, 1.0 / np.maximum(mag, 1e-300))
    px, py, pz = dx * ratio, dy * ratio, dz * ratio
    grad = np.zeros_like(arr)
    grad[:-1, :, :] -= px[:-1, :, :]
    grad[1:, :, :] += px[:-1, :, :]
    grad[:, :-1, :] -= py[:, :-1, :]
    grad[:, 1:, :] += py[:, :-1, :]
    grad[:, :, :-1] -= pz[:, :, :-1]
    grad[:, :, 1:] += pz[:, :, :-1]
    if isinstance(x, Volume):
        return value, Volume(grad.astype(np.float32), x.pitch_m, x.origin_m)
    return value, grad


def fista_reconstruct(psi, sensors, medium, chain, grid, cfg, warm_volume=None):
    """FISTA reconstruction; returns (volume, objective trace).

    The trace holds the objective after each accepted iterate, starting with
    the warm-start value; it is non-increasing by construction (candidates
    that would raise the objective are rejected and momentum restarts).
    """
    if isinstance(grid, Volume):
        grid = grid.grid
    threads = cfg.threads

    def A(xvec):
        vol = Volume(xvec.reshape(grid.shape).astype(np.float32), grid.pitch_m, grid.origin_m)
        return forward_operator(vol, sensors, medium, chain, threads=threads).values

    def At(resid):
        sp = Spectra(resid, chain.freq_hz, sensors.active_indices)
        vol = adjoint_operator(sp, sensors, medium, chain, grid, threads=threads)
        return vol.data.astype(np.float64).ravel()

    warm_x = None
    if warm_volume is not None:
        warm_x = warm_volume.data.astype(np.float64).ravel()
    x, trace = fista_solve(A, At, psi.values, grid, cfg, warm_x=warm_x)
    out = x.reshape(grid.shape).astype(np.float32)
    if cfg.nonneg:
        np.maximum(out, 0.0, out=out)
    return Volume(out, grid.pitch_m, grid.origin_m), trace


def fista_solve(A, At, y_ref, grid, cfg, warm_x=None):
    """Monotone FISTA on generic forward/adjoint callables.

    ``A`` maps a float64 vector of grid.n_voxels to measurement space, ``At``
    maps back; ``y_ref`` is the data.  Returns (x vector, objective trace).
    """
    if isinstance(grid, Volume):
        grid = grid.grid
    w = None
    if cfg.whitening is not None:
        w = np.asarray(cfg.whitening, dtype=np.float64)
        if w.shape != np.shape(y_ref):
            raise ValueError("whitening weights must match the data shape")

    def objective_parts(xvec):
        resid = A(xvec) - y_ref
        if w is not None:
            resid = w * resid
        data = 0.5 * _sq_norm(resid)
        reg = 0.0
        if cfg.lambda_tv > 0:
            tv, _ = tv_huber(xvec.reshape(grid.shape), cfg.huber_delta)
            reg += cfg.lambda_tv * tv
        if cfg.mu_tik > 0:
            reg += 0.5 * cfg.mu_tik * float(np.einsum("i,i->", xvec, xvec))
        return data, reg

    def gradient(xvec):
        resid = A(xvec) - y_ref
        wresid = resid if w is None else (w * w) * resid
        g = At(wresid)
        if cfg.lambda_tv > 0:
            _, tv_grad = tv_huber(xvec.reshape(grid.shape), cfg.huber_delta)
            g = g + cfg.lambda_tv * tv_grad.ravel()
        if cfg.mu_tik > 0:
            g = g + cfg.mu_tik * xvec
        return g

    # Lipschitz bound: ||A||^2 * max(W)^2 + mu.
    if cfg.op_norm is not None:
        op_norm = float(cfg.op_norm)
    else:
        op_norm = estimate_op_norm(A, At, grid, iters=cfg.power_iters, seed=cfg.power_seed)
    w_max = 1.0 if w is None else float(np.max(w))
    lip = op_norm**2 * w_max**2 + cfg.mu_tik
    if lip == 0.0:
        raise ValueError("operator norm estimate is zero; nothing to reconstruct")
    step = 1.0 / lip

    if warm_x is not None:
        x = np.asarray(warm_x, dtype=np.float64).copy()
        if cfg.nonneg:
            np.maximum(x, 0.0, out=x)
        # The back-projection scale is arbitrary; rescale the warm start to
        # the least-squares optimum so it can never start above F(0).
        ax = A(x)
        wa = ax if w is None else w * ax
        wy = y_ref if w is None else w * y_ref
        denom = _sq_norm(wa)
        if denom > 0.0:
            s = _real_inner(wa, wy) / denom
            x = max(s, 0.0) * x
    else:
        x = np.zeros(grid.n_voxels)

    data0, reg0 = objective_parts(x)
    f_x = data0 + reg0
    trace = [f_x]
    y = x.copy()
    t = 1.0
    data_term = data0
    # Per-step slack scales with the starting objective, never an absolute floor.
    slack = 1e-9 * abs(f_x)

    for it in range(cfg.max_iters):
        g = gradient(y)
        z = y - step * g
        if cfg.nonneg:
            np.maximum(z, 0.0, out=z)
        data_z, reg_z = objective_parts(z)
        f_z = data_z + reg_z
        if not np.isfinite(f_z):
            raise DivergenceError(f"non-finite objective at iteration {it + 1}")
        if f_z <= f_x + slack:
            x_new, f_new, data_new = z, f_z, data_z
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = x_new + ((t - 1.0) / t_new) * (x_new - x)
            t = t_new
        else:
            # Reject the step and restart momentum from the current iterate.
            x_new, f_new, data_new = x, f_x, data_term
            y = x.copy()
            t = 1.0
        rel_drop = (f_x - f_new) / max(abs(f_x), 1e-300)
        x, f_x, data_term = x_new, f_new, data_new
        trace.append(f_x)
        if cfg.discrepancy_target is not None and 2.0 * data_term <= cfg.discrepancy_target:
            break
        if 0.0 <= rel_drop < cfg.rel_obj_tol and it > 0:
            break

    return x, np.asarray(trace)


def _real_inner(u, v):
    u = np.asarray(u).ravel()
    v = np.asarray(v).ravel()
    if np.iscomplexobj(u) or np.iscomplexobj(v):
        u = u.astype(np.complex128)
        v = v.astype(np.complex128)
        return (float(np.einsum("i,i->", np.ascontiguousarray(u.real),
                                np.ascontiguousarray(v.real)))
                + float(np.einsum("i,i->", np.ascontiguousarray(u.imag),
                                  np.ascontiguousarray(v.imag))))
    return float(np.einsum("i,i->", u, v))


def default_lambda(psi, sensors, medium, chain, grid, threads=1):
    """Default TV weight: 1e-4 * ||A^H psi||_inf."""
    vol = adjoint_operator(psi, sensors, medium, chain, grid, threads=threads)
    return 1e-4 * float(np.max(np.abs(vol.data)))


def _sq_norm(z):
    z = np.asarray(z).ravel()
    if np.iscomplexobj(z):
        re, im = np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag)
        return float(np.einsum("i,i->", re, re) + np.einsum("i,i->", im, im))
    return float(np.einsum("i,i->", z, z))


def _vec_norm(v):
    return float(np.sqrt(np.einsum("i,i->", v, v)))
