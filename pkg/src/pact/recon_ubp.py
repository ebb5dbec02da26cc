"""Universal back-projection from conditioned time traces.

For each voxel r, the reconstruction accumulates the filtered trace
b(t) = d/dt [t * p(t)] of every active detector at the time of flight
t* = |r - s| / c0, weighted by the detector cell area and (optionally)
1/R spherical spreading, then divides by the summed active weights.
Accumulation is single precision with Kahan compensation (or a pairwise
tree), with a fixed detector order per voxel, so output is bitwise
reproducible for any thread count.
"""

from dataclasses import dataclass

import numpy as np

from ._chunks import map_chunks
from .errors import WindowTooShortError
from .volume import GridSpec, Volume

# Voxel block size; per-voxel sums run over detectors in fixed order, so
# this affects only speed, never the numbers.  Large blocks keep the GIL
# released long enough for worker threads to overlap.
_UBP_CHUNK = 131072


@dataclass(frozen=True)
class UbpConfig:
    """Back-projection parameters."""

    c0: float = 1500.0
    interp: str = "linear"            # 'linear' or 'cubic' (Catmull-Rom)
    use_solid_angle_weights: bool = True
    spreading_weight: bool = True     # apply 1/R
    accumulation: str = "kahan"       # 'kahan' or 'pairwise'

    def __post_init__(self):
        if self.c0 <= 0:
            raise ValueError("sound speed must be positive")
        if self.interp not in ("linear", "cubic"):
            raise ValueError(f"unknown interpolation '{self.interp}'")
        if self.accumulation not in ("kahan", "pairwise"):
            raise ValueError(f"unknown accumulation '{self.accumulation}'")


def ubp_filter(traces, dt):
    """Back-projection filter b(t) = d/dt [t * p(t)].

    Central differences in the interior, one-sided at the ends; exact for
    constant and linear p.
    """
    traces = np.asarray(traces, dtype=np.float64)
    if traces.ndim == 1:
        traces = traces[None, :]
    n_t = traces.shape[1]
    if n_t < 3:
        raise ValueError("need at least 3 time samples to filter")
    t = np.arange(n_t) * dt
    tp = traces * t[None, :]
    out = np.empty_like(tp)
    out[:, 1:-1] = (tp[:, 2:] - tp[:, :-2]) / (2.0 * dt)
    out[:, 0] = (tp[:, 1] - tp[:, 0]) / dt
    out[:, -1] = (tp[:, -1] - tp[:, -2]) / dt
    return out


def ubp_reconstruct(traces, sensors, grid, cfg, dt=None, fs=None, threads=1):
    """Voxel-driven universal back-projection onto ``grid``.

    ``traces`` are already-filtered samples [n_active x n_t] in the order of
    the active elements; pass ``dt`` (or ``fs``).  Out-of-window flight
    times contribute zero, but if more than half of all (voxel, detector)
    pairs fall outside the window the record is considered too short.
    """
    if isinstance(grid, Volume):
        grid = grid.grid
    if not isinstance(grid, GridSpec):
        raise ValueError("grid must be a GridSpec or Volume")
    if dt is None:
        if fs is None:
            raise ValueError("provide dt or fs")
        dt = 1.0 / fs
    traces = np.asarray(traces, dtype=np.float64)
    ids = sensors.active_indices
    if ids.size == 0:
        raise ValueError("sensor array has no active elements")
    if traces.shape[0] != ids.size:
        raise ValueError(
            f"trace rows ({traces.shape[0]}) do not match active detectors ({ids.size})"
        )
    n_t = traces.shape[1]
    pos = sensors.positions[ids]
    lo, hi = grid.bounding_box()
    corners = np.array([[cx, cy, cz] for cx in (lo[0], hi[0])
                        for cy in (lo[1], hi[1]) for cz in (lo[2], hi[2])])
    if np.linalg.norm(corners, axis=1).max() >= sensors.radius_m:
        raise ValueError("reconstruction grid extends outside the detector bowl")
    if cfg.use_solid_angle_weights:
        from .geometry import quadrature_weights

        q = quadrature_weights(sensors)[ids]
    else:
        q = np.ones(ids.size)
    weight_norm = float(q.sum())

    coords = grid.voxel_coords().astype(np.float32)
    n_v = coords.shape[0]
    # Single-precision kernel math: voxel-scale accuracy, half the traffic.
    pos32 = pos.astype(np.float32)
    s2 = np.einsum("ij,ij->i", pos32.astype(np.float64),
                   pos32.astype(np.float64)).astype(np.float32)
    trace32 = traces.astype(np.float32)
    q32 = q.astype(np.float32)
    inv_cdt = np.float32(1.0 / (cfg.c0 * dt))
    cubic = cfg.interp == "cubic"

    def chunk(a, b):
        x = np.ascontiguousarray(coords[a:b, 0])
        y = np.ascontiguousarray(coords[a:b, 1])
        z = np.ascontiguousarray(coords[a:b, 2])
        g2 = x * x + y * y + z * z
        n = b - a
        contribs = _VoxelAccumulator(n, cfg.accumulation)
        R = np.empty(n, dtype=np.float32)
        tau = np.empty(n, dtype=np.float32)
        tmp = np.empty(n, dtype=np.float32)
        frac = np.empty(n, dtype=np.float32)
        v0 = np.empty(n, dtype=np.float32)
        v1 = np.empty(n, dtype=np.float32)
        missed = 0
        for m in range(ids.size):
            sx, sy, sz = pos32[m]
            np.multiply(x, np.float32(-2.0 * sx), out=R)
            R += g2
            np.multiply(y, np.float32(-2.0 * sy), out=tmp)
            R += tmp
            np.multiply(z, np.float32(-2.0 * sz), out=tmp)
            R += tmp
            R += s2[m]
            np.maximum(R, np.float32(0.0), out=R)
            np.sqrt(R, out=R)
            np.multiply(R, inv_cdt, out=tau)
            if cubic:
                val, miss = _interp_cubic(trace32[m], tau, n_t)
            else:
                val, miss = _interp_linear(trace32[m], tau, n_t, frac, v0, v1)
            missed += miss
            val *= q32[m]
            if cfg.spreading_weight:
                val /= R
            contribs.add(val)
        return contribs.total(), missed

    results = map_chunks(chunk, n_v, _UBP_CHUNK, threads)
    out = np.concatenate([r[0] for r in results])
    n_missed = sum(r[1] for r in results)
    if n_missed > 0.5 * n_v * ids.size:
        raise WindowTooShortError(
            f"{n_missed} of {n_v * ids.size} voxel-detector flight times "
            "fall outside the recorded window"
        )
    # The derivative filter d/dt[t p] carries the opposite sign of the
    # classical inversion kernel 2p - 2t dp/dt on band-passed data; the
    # arbitrary proportionality constant is chosen negative so positive
    # sources reconstruct positive.
    out = out / np.float32(-weight_norm)
    return Volume(out.reshape(grid.shape), grid.pitch_m, grid.origin_m)


def _interp_linear(trace, tau, n_t, frac, v0, v1):
    """In-place linear sampling of one trace at fractional indices ``tau``.

    Out-of-window samples are zeroed; returns (values-in-v1, missed count).
    """
    idx = tau.astype(np.int32)  # tau >= 0, so truncation is floor
    np.subtract(tau, idx, out=frac)
    invalid = idx > n_t - 2
    missed = int(np.count_nonzero(invalid))
    np.minimum(idx, n_t - 2, out=idx)
    np.take(trace, idx, out=v0)
    idx += 1
    np.take(trace, idx, out=v1)
    v1 -= v0
    v1 *= frac
    v1 += v0
    if missed:
        v1[invalid] = 0.0
    return v1, missed


def _interp_cubic(trace, tau, n_t):
    """Catmull-Rom sampling; boundary cells fall back to linear."""
    idx = tau.astype(np.int32)
    valid = idx <= n_t - 2
    missed = idx.size - int(np.count_nonzero(valid))
    safe = np.minimum(idx, n_t - 2)
    frac = (tau - idx).astype(np.float64)
    inner = valid & (idx >= 1) & (idx <= n_t - 3)
    si = np.where(inner, idx, 1)
    f = frac
    p0, p1, p2, p3 = trace[si - 1], trace[si], trace[si + 1], trace[si + 2]
    cub = 0.5 * (
        2.0 * p1
        + (-p0 + p2) * f
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * f * f
        + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * f * f * f
    )
    lin = (1.0 - frac) * trace[safe] + frac * trace[safe + 1]
    val = np.where(inner, cub, lin).astype(np.float32)
    val *= valid
    return val, missed


class _VoxelAccumulator:
    """Single-precision accumulation over detectors, Kahan or pairwise tree.

    All work buffers are preallocated; ``add`` never allocates.
    """

    def __init__(self, n, mode):
        self.mode = mode
        self.n = n
        if mode == "kahan":
            self.acc = np.zeros(n, dtype=np.float32)
            self.comp = np.zeros(n, dtype=np.float32)
            self._y = np.empty(n, dtype=np.float32)
            self._t = np.empty(n, dtype=np.float32)
        else:
            self.stack = []  # (level, partial-sum) pairs of a binary counter

    def add(self, contrib):
        if self.mode == "kahan":
            y, t = self._y, self._t
            np.subtract(contrib, self.comp, out=y)
            np.add(self.acc, y, out=t)
            np.subtract(t, self.acc, out=self.comp)
            self.comp -= y
            # t becomes the running sum; recycle the old sum as scratch.
            self.acc, self._t = t, self.acc
            return
        level, part = 0, contrib.copy()
        while self.stack and self.stack[-1][0] == level:
            _, prev = self.stack.pop()
            part += prev
            level += 1
        self.stack.append((level, part))

    def total(self):
        if self.mode == "kahan":
            return self.acc
        if not self.stack:
            return np.zeros(self.n, dtype=np.float32)
        total = self.stack[0][1]
        for _, part in self.stack[1:]:
            total = total + part
        return total
