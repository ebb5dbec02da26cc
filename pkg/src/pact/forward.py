"""Frequency-domain acoustic forward model and its adjoint.

The detected spectrum of detector m at angular frequency w_k is the
discretized free-space single-layer potential

    psi[m, k] = gain_m * H(w_k) * sum_v P(r_v) * exp(i*k(w)*R) / (4*pi*R) * dV,

with R = |r_v - s_m| and complex wavenumber k(w) = w/c0 + i*alpha(w).  Sums
over voxels run in a fixed order (restricted to the nonzero support of P),
so results are bitwise reproducible for any thread count.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._chunks import DETECTOR_CHUNK, map_chunks
from .errors import GeometryMismatchError
from .volume import Volume


@dataclass(frozen=True)
class AcousticMedium:
    """Homogeneous acoustic medium; optional power-law attenuation.

    ``alpha0`` is in Np/m at 1 MHz, scaled as (f / 1 MHz)**alpha_exponent.
    """

    c0: float = 1500.0
    rho0: float = 1000.0
    alpha0: float = 0.0
    alpha_exponent: float = 1.0

    def __post_init__(self):
        if self.c0 <= 0 or self.rho0 <= 0:
            raise ValueError("sound speed and density must be positive")
        if self.alpha0 < 0:
            raise ValueError("attenuation must be >= 0")

    def attenuation_np_per_m(self, freq_hz):
        if self.alpha0 == 0.0:
            return None
        return self.alpha0 * (np.asarray(freq_hz) / 1e6) ** self.alpha_exponent


@dataclass
class ReceiveChain:
    """Sampling, record length and per-bin receive response.

    Retains ``n_freq`` positive DFT bins of a record of ``n_t`` samples at
    ``fs``; bin k (1-based) sits at angular frequency 2*pi*k/T with
    T = n_t / fs.
    """

    fs: float
    n_t: int
    n_freq: int
    response: np.ndarray = None
    per_channel_gain: np.ndarray = None
    anti_alias_hz: float = 7.5e6

    def __post_init__(self):
        if self.fs <= 0 or self.n_t < 2:
            raise ValueError("invalid sampling rate or record length")
        if not 1 <= self.n_freq <= self.n_t // 2:
            raise ValueError(
                f"n_freq={self.n_freq} exceeds the Nyquist bin {self.n_t // 2}"
            )
        if self.response is None:
            self.response = np.ones(self.n_freq, dtype=np.complex128)
        self.response = np.asarray(self.response, dtype=np.complex128)
        if self.response.shape != (self.n_freq,):
            raise ValueError("response must hold one complex value per bin")
        peak = float(np.abs(self.response).max())
        if peak > 1.0 + 1e-12:
            self.response = self.response / peak
        if self.per_channel_gain is not None:
            self.per_channel_gain = np.asarray(self.per_channel_gain, dtype=np.float64)

    @property
    def T(self):
        return self.n_t / self.fs

    @property
    def freq_hz(self):
        return np.arange(1, self.n_freq + 1) / self.T

    @property
    def omega(self):
        return 2.0 * np.pi * self.freq_hz


def default_receive_chain(sensors, grid, medium, fs=20e6, n_freq=149,
                          center_hz=2.12e6, fractional_bw=0.78,
                          anti_alias_hz=7.5e6, pulse_support_s=3e-6,
                          derivative=False):
    """Receive chain sized so every voxel-to-detector flight fits the window.

    The response is a zero-phase Gaussian band-pass (center 2.12 MHz, 78%
    fractional FWHM by default) under a raised-cosine anti-alias rolloff,
    normalized to unit peak; a parametric stand-in for the measured impulse
    response.  With ``derivative=True`` the response also carries the
    -i*omega factor of the wave-equation solution, so simulated traces have
    the physical N-wave polarity that back-projection expects.
    """
    if isinstance(grid, Volume):
        grid = grid.grid
    lo, hi = grid.bounding_box()
    corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                        for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    act = sensors.positions[sensors.active]
    if act.shape[0] == 0:
        raise ValueError("sensor array has no active elements")
    d = np.linalg.norm(act[:, None, :] - corners[None, :, :], axis=2)
    t_max = float(d.max()) / medium.c0 + pulse_support_s
    n_t = int(math.ceil(t_max * fs))
    n_t += n_t % 2  # keep the record even
    n_freq = min(n_freq, n_t // 2)
    freqs = np.arange(1, n_freq + 1) * (fs / n_t)
    response = band_pass_response(freqs, center_hz, fractional_bw, anti_alias_hz,
                                  derivative=derivative)
    return ReceiveChain(fs=fs, n_t=n_t, n_freq=n_freq, response=response,
                        anti_alias_hz=anti_alias_hz)


def band_pass_response(freq_hz, center_hz, fractional_bw, anti_alias_hz,
                       taper_start=0.8, derivative=False):
    """Gaussian band-pass times raised-cosine anti-alias rolloff, unit peak."""
    freq_hz = np.asarray(freq_hz, dtype=np.float64)
    fwhm = fractional_bw * center_hz
    sigma = fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    h = np.exp(-0.5 * ((freq_hz - center_hz) / sigma) ** 2)
    f0 = taper_start * anti_alias_hz
    roll = np.ones_like(freq_hz)
    band = (freq_hz > f0) & (freq_hz < anti_alias_hz)
    roll[band] = 0.5 * (1.0 + np.cos(np.pi * (freq_hz[band] - f0) / (anti_alias_hz - f0)))
    roll[freq_hz >= anti_alias_hz] = 0.0
    h = (h * roll).astype(np.complex128)
    if derivative:
        h = h * (-1j * freq_hz / center_hz)
    peak = float(np.abs(h).max())
    return h / peak if peak > 0 else h


@dataclass
class Spectra:
    """Complex frequency-domain measurements, one row per active detector."""

    values: np.ndarray
    freq_hz: np.ndarray
    detector_ids: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        self.freq_hz = np.asarray(self.freq_hz, dtype=np.float64)
        self.detector_ids = np.asarray(self.detector_ids, dtype=np.int64)
        if self.values.ndim != 2:
            raise ValueError("spectra values must be 2D [n_det x n_freq]")
        if self.values.shape != (self.detector_ids.size, self.freq_hz.size):
            raise ValueError("spectra fields have inconsistent dimensions")
        if self.freq_hz.size >= 2 and np.any(np.diff(self.freq_hz) <= 0):
            raise ValueError("frequencies must be strictly increasing")

    @property
    def n_det(self):
        return self.values.shape[0]

    @property
    def n_freq(self):
        return self.values.shape[1]

    def energy(self):
        return float(np.einsum("ij,ij->", self.values.real, self.values.real)
                     + np.einsum("ij,ij->", self.values.imag, self.values.imag))

    def copy(self):
        return Spectra(self.values.copy(), self.freq_hz.copy(), self.detector_ids.copy())


@dataclass(frozen=True)
class PhysicsMask:
    """Random subset of (frequency bin, detector row) pairs for the physics residual."""

    mode_indices: np.ndarray
    sensor_indices: np.ndarray
    seed: int = None

    def __post_init__(self):
        object.__setattr__(self, "mode_indices",
                           np.asarray(self.mode_indices, dtype=np.int64))
        object.__setattr__(self, "sensor_indices",
                           np.asarray(self.sensor_indices, dtype=np.int64))
        for name, idx in (("mode", self.mode_indices), ("sensor", self.sensor_indices)):
            if idx.size == 0:
                raise ValueError(f"{name} subset must be non-empty")
            if np.unique(idx).size != idx.size:
                raise ValueError(f"{name} subset contains duplicates")
            if np.any(idx < 0):
                raise ValueError(f"{name} subset contains negative indices")


def _active_geometry(sensors):
    ids = sensors.active_indices
    if ids.size == 0:
        raise ValueError("sensor array has no active elements")
    pos = sensors.positions[ids]
    return ids, pos


def _check_detectors_outside(positions, grid):
    lo, hi = grid.bounding_box()
    # Distance from each detector to the voxel-center bounding box.
    d = np.maximum(np.maximum(lo - positions, positions - hi), 0.0)
    dist = np.sqrt(np.einsum("ij,ij->i", d, d))
    if np.any(dist < grid.pitch_m):
        raise ValueError(
            "active detector lies inside (or within one voxel pitch of) the volume"
        )


def _support(vol):
    """Nonzero voxels of a volume: (values float64 [n], coords float64 [n,3])."""
    flat = vol.data.ravel()
    idx = np.flatnonzero(flat)
    vals = flat[idx].astype(np.float64)
    nx, ny, nz = vol.shape
    ix = idx // (ny * nz)
    rem = idx % (ny * nz)
    iy = rem // nz
    iz = rem % nz
    org = np.asarray(vol.origin_m)
    coords = np.stack(
        [org[0] + vol.pitch_m * ix, org[1] + vol.pitch_m * iy, org[2] + vol.pitch_m * iz],
        axis=1,
    )
    return vals, coords


def _chain_gains(chain, n_rows):
    if chain.per_channel_gain is None:
        return None
    g = chain.per_channel_gain
    if g.shape != (n_rows,):
        raise ValueError("per_channel_gain length must match the active detector count")
    return g


def forward_operator(p, sensors, medium, chain, threads=1):
    """Simulate complex spectra from an initial-pressure volume.

    Returns a :class:`Spectra` over the active detectors and the chain's
    retained bins.  Deterministic for any ``threads``.
    """
    ids, pos = _active_geometry(sensors)
    _check_detectors_outside(pos, p.grid)
    gains = _chain_gains(chain, ids.size)
    vals, coords = _support(p)
    omega = chain.omega
    alphas = medium.attenuation_np_per_m(chain.freq_hz)
    dV = p.pitch_m**3
    n_freq = chain.n_freq

    if vals.size == 0:
        values = np.zeros((ids.size, n_freq), dtype=np.complex128)
    else:
        def rows(a, b):
            return _forward_rows(pos[a:b], vals, coords, omega, medium.c0,
                                 alphas, dV)

        values = np.concatenate(map_chunks(rows, ids.size, DETECTOR_CHUNK, threads))
    if gains is not None:
        values *= gains[:, None]
    values *= chain.response[None, :]
    return Spectra(values, chain.freq_hz, ids)


def _forward_rows(det_pos, vals, coords, omega, c0, alphas, dV):
    n_freq = omega.size
    out = np.empty((det_pos.shape[0], n_freq), dtype=np.complex128)
    scale = dV / (4.0 * np.pi)
    for i in range(det_pos.shape[0]):
        d = coords - det_pos[i]
        R = np.sqrt(np.einsum("vj,vj->v", d, d))
        g = vals * (scale / R)
        # omega_k = k * omega_1, so the phase advances by one multiply per bin.
        base = np.exp((1j * omega[0] / c0) * R)
        ph = base.copy()
        for k in range(n_freq):
            if alphas is None:
                re = np.einsum("v,v->", g, ph.real)
                im = np.einsum("v,v->", g, ph.imag)
            else:
                att = g * np.exp(-alphas[k] * R)
                re = np.einsum("v,v->", att, ph.real)
                im = np.einsum("v,v->", att, ph.imag)
            out[i, k] = complex(re, im)
            if k + 1 < n_freq:
                ph *= base
    return out


def adjoint_operator(psi, sensors, medium, chain, grid, threads=1):
    """Conjugate-transpose of :func:`forward_operator` onto a voxel grid.

    Treats the forward map as a real-linear operator into C^M with the real
    inner product Re(u^H v); the output volume is the exact adjoint under
    that pairing (dot-product test holds against the forward).
    """
    if isinstance(grid, Volume):
        grid = grid.grid
    ids, pos = _active_geometry(sensors)
    _check_detectors_outside(pos, grid)
    if psi.n_det != ids.size or not np.array_equal(psi.detector_ids, ids):
        raise GeometryMismatchError("spectra rows do not match the active detector set")
    if psi.n_freq != chain.n_freq:
        raise GeometryMismatchError("spectra bins do not match the receive chain")
    gains = _chain_gains(chain, ids.size)
    omega = chain.omega
    alphas = medium.attenuation_np_per_m(chain.freq_hz)
    coords = grid.voxel_coords()
    dV = grid.pitch_m**3
    # Fold response and gains into the per-row coefficients.
    coeff = psi.values * np.conj(chain.response)[None, :]
    if gains is not None:
        coeff = coeff * gains[:, None]

    def partial(a, b):
        return _adjoint_rows(pos[a:b], coeff[a:b], coords, omega, medium.c0,
                             alphas, dV)

    parts = map_chunks(partial, ids.size, DETECTOR_CHUNK, threads)
    acc = parts[0]
    for part in parts[1:]:
        acc += part
    data = acc.reshape(grid.shape).astype(np.float32)
    return Volume(data, grid.pitch_m, grid.origin_m)


def _adjoint_rows(det_pos, coeff, coords, omega, c0, alphas, dV):
    n_freq = omega.size
    acc = np.zeros(coords.shape[0], dtype=np.float64)
    scale = dV / (4.0 * np.pi)
    tmp = np.empty(coords.shape[0], dtype=np.float64)
    for i in range(det_pos.shape[0]):
        d = coords - det_pos[i]
        R = np.sqrt(np.einsum("vj,vj->v", d, d))
        w = scale / R
        det_acc = np.zeros(coords.shape[0], dtype=np.float64)
        if alphas is None:
            base = np.exp((-1j * omega[0] / c0) * R)
            ph = base.copy()
            for k in range(n_freq):
                c = coeff[i, k]
                # Re(conj(G) * psi) accumulated without complex temporaries.
                np.multiply(ph.real, c.real, out=tmp)
                det_acc += tmp
                np.multiply(ph.imag, c.imag, out=tmp)
                det_acc -= tmp
                if k + 1 < n_freq:
                    ph *= base
        else:
            for k in range(n_freq):
                c = coeff[i, k]
                ph = np.exp((-1j * omega[k] / c0 - alphas[k]) * R)
                det_acc += ph.real * c.real - ph.imag * c.imag
        acc += det_acc * w
    return acc


def to_time_domain(psi, chain):
    """Real time traces from the retained positive bins.

    Bin 0 and bins above ``n_freq`` are zero; the inverse DFT uses the
    conjugate-symmetric extension, so a forward DFT of the result reproduces
    the retained bins exactly.  The spectra follow the physics convention
    p(t) = Re sum_k psi_k exp(-i w_k t) (a Green's factor exp(+i w R / c0)
    is an arrival at t = R / c0), hence the conjugation against numpy's
    exp(+i w t) inverse transform.
    """
    if psi.n_freq != chain.n_freq:
        raise ValueError("spectra bins do not match the receive chain")
    n_t = chain.n_t
    full = np.zeros((psi.n_det, n_t // 2 + 1), dtype=np.complex128)
    full[:, 1:chain.n_freq + 1] = np.conj(psi.values)
    return np.fft.irfft(full, n=n_t, axis=1)


def from_time_domain(traces, chain, detector_ids):
    """Forward DFT of real traces back to the retained bins (round-trip twin)."""
    traces = np.asarray(traces, dtype=np.float64)
    if traces.shape[1] != chain.n_t:
        raise ValueError("trace length does not match the receive chain")
    spec = np.conj(np.fft.rfft(traces, axis=1)[:, 1:chain.n_freq + 1])
    return Spectra(spec, chain.freq_hz, detector_ids)


def add_noise(psi, snr_db, rng_seed):
    """Add circular complex Gaussian noise reaching the target SNR in dB.

    ``snr_db = inf`` is the no-noise sentinel.  Noise energy expectation is
    ||psi||^2 * 10**(-snr_db/10); deterministic in ``rng_seed``.
    """
    if psi.values.size == 0:
        raise ValueError("cannot add noise to empty spectra")
    if np.isinf(snr_db) and snr_db > 0:
        return psi.copy()
    energy = psi.energy()
    if energy == 0.0:
        raise ValueError("zero-energy spectra cannot meet a finite target SNR")
    m = psi.values.size
    sigma = math.sqrt(energy * 10.0 ** (-snr_db / 10.0) / m)
    rng = np.random.default_rng(rng_seed)
    noise = rng.standard_normal(psi.values.shape) + 1j * rng.standard_normal(psi.values.shape)
    out = psi.copy()
    out.values = psi.values + (sigma / math.sqrt(2.0)) * noise
    return out


def sample_physics_mask(n_modes, n_sensors, chain, sensors, rng_seed):
    """Uniform without-replacement subsets of bins and active-detector rows."""
    n_active = int(np.count_nonzero(sensors.active))
    if not 1 <= n_modes <= chain.n_freq:
        raise ValueError(f"n_modes={n_modes} outside [1, {chain.n_freq}]")
    if not 1 <= n_sensors <= n_active:
        raise ValueError(f"n_sensors={n_sensors} outside [1, {n_active}]")
    rng = np.random.default_rng(rng_seed)
    modes = np.sort(rng.choice(chain.n_freq, size=n_modes, replace=False))
    rows = np.sort(rng.choice(n_active, size=n_sensors, replace=False))
    return PhysicsMask(modes, rows, rng_seed)


def physics_residual(p_hat, psi, mask, sensors, medium, chain, threads=1):
    """Squared data mismatch ||M A p_hat - M psi||_2^2 on the masked pairs.

    The forward operator is evaluated only on the masked (sensor, mode)
    pairs, never in full, so the cost is O(|mask| * n_voxels).
    """
    ids, pos = _active_geometry(sensors)
    _check_detectors_outside(pos, p_hat.grid)
    if psi.n_det != ids.size or psi.n_freq != chain.n_freq:
        raise ValueError("spectra are inconsistent with the sensor array or chain")
    if np.any(mask.sensor_indices >= ids.size) or np.any(mask.mode_indices >= chain.n_freq):
        raise ValueError("mask indices out of range")
    gains = _chain_gains(chain, ids.size)
    vals, coords = _support(p_hat)
    omega = chain.omega[mask.mode_indices]
    alphas = medium.attenuation_np_per_m(chain.freq_hz)
    alphas = None if alphas is None else alphas[mask.mode_indices]
    dV = p_hat.pitch_m**3
    h = chain.response[mask.mode_indices]
    sub_pos = pos[mask.sensor_indices]
    ref = psi.values[np.ix_(mask.sensor_indices, mask.mode_indices)]

    def rows(a, b):
        if vals.size == 0:
            pred = np.zeros((b - a, omega.size), dtype=np.complex128)
        else:
            pred = _masked_rows(sub_pos[a:b], vals, coords, omega, medium.c0,
                                alphas, dV)
        pred *= h[None, :]
        if gains is not None:
            pred *= gains[mask.sensor_indices[a:b], None]
        diff = pred - ref[a:b]
        return float(np.einsum("ij,ij->", diff.real, diff.real)
                     + np.einsum("ij,ij->", diff.imag, diff.imag))

    parts = map_chunks(rows, sub_pos.shape[0], DETECTOR_CHUNK, threads)
    return float(sum(parts))


def save_spectra(psi, chain, path, geometry_file=None, c0=None):
    """Raw interleaved complex64 rows plus a JSON sidecar header."""
    import json

    header = {
        "n_det": int(psi.n_det),
        "n_freq": int(psi.n_freq),
        "fs": float(chain.fs),
        "T": chain.T,
        "n_t": int(chain.n_t),
        "c0": c0,
        "geometry": geometry_file,
        "detector_ids": [int(i) for i in psi.detector_ids],
        "anti_alias_hz": float(chain.anti_alias_hz),
        "response_re": [float(v) for v in chain.response.real],
        "response_im": [float(v) for v in chain.response.imag],
        "gains": None if chain.per_channel_gain is None
        else [float(g) for g in chain.per_channel_gain],
        "dtype": "c8le",
    }
    with open(str(path) + ".json", "w") as f:
        json.dump(header, f)
        f.write("\n")
    with open(path, "wb") as f:
        f.write(np.ascontiguousarray(psi.values, dtype="<c8").tobytes())


def load_spectra(path):
    """Read spectra written by :func:`save_spectra`; returns (Spectra, ReceiveChain, header)."""
    import json

    with open(str(path) + ".json") as f:
        header = json.load(f)
    for key in ("n_det", "n_freq", "fs", "n_t", "detector_ids"):
        if key not in header:
            raise GeometryMismatchError(f"{path}.json: missing header field '{key}'")
    n_det, n_freq = int(header["n_det"]), int(header["n_freq"])
    response = (np.asarray(header["response_re"], dtype=np.float64)
                + 1j * np.asarray(header["response_im"], dtype=np.float64))
    gains = header.get("gains")
    chain = ReceiveChain(
        fs=float(header["fs"]),
        n_t=int(header["n_t"]),
        n_freq=n_freq,
        response=response,
        per_channel_gain=None if gains is None else np.asarray(gains, dtype=np.float64),
        anti_alias_hz=float(header.get("anti_alias_hz", 7.5e6)),
    )
    raw = np.fromfile(path, dtype="<c8")
    if raw.size != n_det * n_freq:
        raise GeometryMismatchError(
            f"{path}: payload has {raw.size} values, header promises {n_det * n_freq}"
        )
    values = raw.reshape(n_det, n_freq).astype(np.complex128)
    psi = Spectra(values, chain.freq_hz, np.asarray(header["detector_ids"], dtype=np.int64))
    return psi, chain, header


def _masked_rows(det_pos, vals, coords, omega, c0, alphas, dV):
    n = coords.shape[0]
    out = np.empty((det_pos.shape[0], omega.size), dtype=np.complex128)
    scale = dV / (4.0 * np.pi)
    arg = np.empty(n)
    cos_b = np.empty(n)
    sin_b = np.empty(n)
    for i in range(det_pos.shape[0]):
        d = coords - det_pos[i]
        R = np.sqrt(np.einsum("vj,vj->v", d, d))
        g = vals * (scale / R)
        for j in range(omega.size):
            np.multiply(R, omega[j] / c0, out=arg)
            np.cos(arg, out=cos_b)
            np.sin(arg, out=sin_b)
            if alphas is not None:
                att = np.exp(-alphas[j] * R)
                cos_b *= att
                sin_b *= att
            re = np.einsum("v,v->", g, cos_b)
            im = np.einsum("v,v->", g, sin_b)
            out[i, j] = complex(re, im)
    return out
