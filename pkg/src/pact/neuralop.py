"""Verification-scale neural-operator building blocks.

Geodesic-disk kernel bases (piecewise linear, Haar, Zernike), the spherical
discrete-continuous convolution built from them, and the truncated-mode
spectral layer.  No training loop: parameters are loaded or seeded, and the
module's contract is exactness of the forward maps.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import BasisSupportError
from .geometry import SensorArray, quadrature_weights

_BASIS_KINDS = ("piecewise_linear", "haar", "zernike")

# Production-scale defaults; desk-scale checks use (4, 4, 8) modes.
DEFAULT_FNO_MODES = (13, 22, 98)
DEFAULT_BASIS_RADIUS = 0.1 * np.pi
DEFAULT_BASIS_SIZE = 4


@dataclass(frozen=True)
class KernelBasis:
    """L basis functions supported on the geodesic ball of radius ``r`` (rad).

    Layout depends on ``kind``: piecewise-linear carries collocation rings
    (radii plus per-ring azimuth counts, the innermost ring is a single
    isotropic node), Haar a dyadic radius/azimuth sign structure, Zernike the
    OSA-ordered (n, m) index list on the rescaled disk.
    """

    kind: str
    L: int
    r: float
    ring_counts: tuple = None     # piecewise_linear only, e.g. (1, 3)

    def __post_init__(self):
        if self.kind not in _BASIS_KINDS:
            raise ValueError(f"unknown basis kind '{self.kind}'")
        if not 0.0 < self.r <= np.pi / 2:
            raise ValueError("support radius must lie in (0, pi/2]")
        if self.L < 1:
            raise ValueError("need at least one basis function")
        if self.kind == "haar" and self.L not in (1, 2, 4, 8):
            raise ValueError("haar basis supports L in {1, 2, 4, 8}")
        if self.kind == "piecewise_linear":
            counts = self.ring_counts or (1, self.L - 1)
            if counts[0] != 1 or sum(counts) != self.L or any(c < 1 for c in counts):
                raise ValueError("ring counts must start with 1 and sum to L")
            object.__setattr__(self, "ring_counts", tuple(int(c) for c in counts))

    @property
    def ring_radii(self):
        k = len(self.ring_counts)
        if k == 1:
            return (0.0,)
        return tuple(self.r * j / (k - 1) for j in range(k))


def make_kernel_basis(kind, L, r, ring_counts=None):
    return KernelBasis(kind=kind, L=L, r=r, ring_counts=ring_counts)


def eval_kernel_basis(basis, rho, phi):
    """Evaluate all L basis functions at polar disk coordinates (rho, phi).

    Accepts scalars or same-shape arrays; returns shape ``rho.shape + (L,)``.
    Values vanish for rho > r and are 2*pi-periodic in phi.
    """
    rho = np.asarray(rho, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    if np.any(rho < 0):
        raise ValueError("rho must be >= 0")
    scalar = rho.ndim == 0
    rho = np.atleast_1d(rho)
    phi = np.broadcast_to(np.atleast_1d(phi), rho.shape)
    inside = rho <= basis.r
    if basis.kind == "piecewise_linear":
        vals = _eval_piecewise_linear(basis, rho, phi)
    elif basis.kind == "haar":
        vals = _eval_haar(basis, rho, phi)
    else:
        vals = _eval_zernike(basis, rho, phi)
    vals *= inside[..., None]
    return vals[0] if scalar else vals


def _tent(t):
    return np.maximum(1.0 - np.abs(t), 0.0)


def _wrap_pi(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def _eval_piecewise_linear(basis, rho, phi):
    radii = basis.ring_radii
    counts = basis.ring_counts
    d_rho = basis.r / (len(radii) - 1) if len(radii) > 1 else basis.r
    out = np.empty(rho.shape + (basis.L,))
    col = 0
    for ring, (rad, count) in enumerate(zip(radii, counts)):
        radial = _tent((rho - rad) / d_rho)
        if ring == 0:
            # Innermost node is isotropic: the disk center has no azimuth.
            out[..., col] = radial
            col += 1
            continue
        scale = np.sin(rad) / rad
        for c in range(count):
            node = 2.0 * np.pi * c / count
            out[..., col] = radial * _tent(scale * _wrap_pi(phi - node))
            col += 1
    return out


def _eval_haar(basis, rho, phi):
    p = np.mod(phi, 2.0 * np.pi)
    rad_fns = [np.ones_like(rho), np.where(rho < basis.r / 2.0, 1.0, -1.0)]
    ang_fns = [
        np.ones_like(p),
        np.where(p < np.pi, 1.0, -1.0),
        np.where(p < np.pi / 2, 1.0, np.where(p < np.pi, -1.0, 0.0)),
        np.where(p < np.pi, 0.0, np.where(p < 1.5 * np.pi, 1.0, -1.0)),
    ]
    # Dyadic tensor order: constant, radial sign, then angular refinements.
    pairs = [(0, 0), (1, 0), (0, 1), (1, 1), (0, 2), (1, 2), (0, 3), (1, 3)]
    out = np.empty(rho.shape + (basis.L,))
    for ell in range(basis.L):
        ri, ai = pairs[ell]
        out[..., ell] = rad_fns[ri] * ang_fns[ai]
    return out


def _osa_nm(j):
    n = int(math.ceil((-3.0 + math.sqrt(9.0 + 8.0 * j)) / 2.0))
    m = 2 * j - n * (n + 2)
    return n, m


def zernike_radial(n, m_abs, t):
    out = np.zeros_like(t)
    for s in range((n - m_abs) // 2 + 1):
        coeff = ((-1) ** s * math.factorial(n - s)
                 / (math.factorial(s)
                    * math.factorial((n + m_abs) // 2 - s)
                    * math.factorial((n - m_abs) // 2 - s)))
        out = out + coeff * t ** (n - 2 * s)
    return out


def _eval_zernike(basis, rho, phi):
    t = np.minimum(rho / basis.r, 1.0)
    out = np.empty(rho.shape + (basis.L,))
    for j in range(basis.L):
        n, m = _osa_nm(j)
        rad = zernike_radial(n, abs(m), t)
        if m < 0:
            out[..., j] = rad * np.sin(abs(m) * phi)
        elif m > 0:
            out[..., j] = rad * np.cos(m * phi)
        else:
            out[..., j] = rad
    return out


def _unit_points_and_weights(pts):
    """(unit vectors [n,3], weights [n]) from a SensorArray or raw points."""
    if isinstance(pts, SensorArray):
        ids = pts.active_indices
        units = pts.positions[ids] / pts.radius_m
        q = quadrature_weights(pts)[ids]
        return units, q
    units = np.asarray(pts, dtype=np.float64)
    if units.ndim != 2 or units.shape[1] != 3:
        raise ValueError("points must be an (n, 3) array or a SensorArray")
    norms = np.linalg.norm(units, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("points must be unit vectors")
    return units / norms[:, None], None


def _tangent_frame(v):
    """East and north unit vectors of the tangent plane at unit point(s) v."""
    z = np.array([0.0, 0.0, 1.0])
    east = np.cross(np.broadcast_to(z, v.shape), v)
    norm = np.linalg.norm(east, axis=-1, keepdims=True)
    # At the poles any azimuth reference works.
    east = np.where(norm > 1e-12, east / np.maximum(norm, 1e-300), [1.0, 0.0, 0.0])
    north = np.cross(v, east)
    return east, north


def build_disco_matrices(in_pts, out_pts, basis):
    """Sparse evaluation matrices K^l of shape [n_out x n_in].

    K^l[i, j] = b_l(rho_ij, phi_ij) * q_j, present only when the geodesic
    distance from output point v_i to input point u_j is at most the basis
    radius.  (rho, phi) are log-map polar coordinates of u_j about v_i with
    local east as phi = 0.

    When both point sets are sensor arrays sharing the azimuth lattice, the
    local coordinates are computed from integer column differences, which
    makes the matrices exactly invariant under grid-step rotations (this
    matters for bases with discontinuities such as Haar, whose sign
    boundaries run along lattice directions).
    """
    units_in, q = _unit_points_and_weights(in_pts)
    units_out, _ = _unit_points_and_weights(out_pts)
    if q is None:
        raise ValueError("input points must be a SensorArray carrying quadrature weights")
    n_in = units_in.shape[0]
    n_out = units_out.shape[0]

    lattice = (isinstance(in_pts, SensorArray) and isinstance(out_pts, SensorArray)
               and in_pts.n_phi == out_pts.n_phi)
    if lattice:
        n_phi = in_pts.n_phi
        in_ids = in_pts.active_indices
        out_ids = out_pts.active_indices
        th_in = in_pts.angles[in_ids, 0]
        th_out = out_pts.angles[out_ids, 0]
        col_in = in_ids % n_phi
        col_out = out_ids % n_phi
        dphi_table = np.arange(n_phi) * (2.0 * np.pi / n_phi)
        sin_dphi, cos_dphi = np.sin(dphi_table), np.cos(dphi_table)
        sin_in, cos_in = np.sin(th_in), np.cos(th_in)
        sin_out, cos_out = np.sin(th_out), np.cos(th_out)
    else:
        east, north = _tangent_frame(units_out)

    rows, cols, vals = [], [], []
    empty = 0
    cos_r = np.cos(basis.r)
    for i in range(n_out):
        if lattice:
            dj = (col_in - col_out[i]) % n_phi
            cos_rho = (cos_in * cos_out[i]
                       + sin_in * sin_out[i] * cos_dphi[dj])
            nbr = np.flatnonzero(cos_rho >= cos_r)
            if nbr.size == 0:
                empty += 1
                continue
            rho = np.arccos(np.clip(cos_rho[nbr], -1.0, 1.0))
            # Tangent-frame components from angle differences only.
            djn = dj[nbr]
            e_comp = sin_in[nbr] * sin_dphi[djn]
            n_comp = cos_in[nbr] * sin_out[i] - sin_in[nbr] * cos_out[i] * cos_dphi[djn]
            phi = np.arctan2(n_comp, e_comp)
        else:
            dots = units_in @ units_out[i]
            nbr = np.flatnonzero(dots >= cos_r)
            if nbr.size == 0:
                empty += 1
                continue
            u = units_in[nbr]
            rho = np.arccos(np.clip(dots[nbr], -1.0, 1.0))
            phi = np.arctan2(u @ north[i], u @ east[i])
        b = eval_kernel_basis(basis, rho, phi)  # [n_nbr, L]
        rows.append(np.full(nbr.size, i, dtype=np.int64))
        cols.append(nbr)
        vals.append(b * q[nbr][:, None])
    if empty > 0.1 * n_out:
        raise BasisSupportError(
            f"{empty} of {n_out} output points have no inputs within r={basis.r:g}; "
            "basis radius too small for the grid density"
        )
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
    else:
        rows = np.zeros(0, dtype=np.int64)
        cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros((0, basis.L))
    mats = []
    for ell in range(basis.L):
        m = sparse.coo_matrix((vals[:, ell], (rows, cols)), shape=(n_out, n_in))
        mats.append(m.tocsr())
    return mats


@dataclass
class DiscoLayer:
    """Spherical discrete-continuous convolution with channel mixing.

    ``matrices`` depend only on geometry and basis; ``theta`` has shape
    [C_out, C_in, L] and is the only learnable state.  ``in_points`` and
    ``out_points`` optionally keep references to the sampled point sets the
    matrices were built from.
    """

    basis: KernelBasis
    matrices: list
    theta: np.ndarray
    in_points: object = None
    out_points: object = None
    n_in: int = field(init=False)
    n_out: int = field(init=False)

    def __post_init__(self):
        self.theta = np.asarray(self.theta)
        if self.theta.ndim != 3 or self.theta.shape[2] != self.basis.L:
            raise ValueError("theta must have shape [C_out, C_in, L]")
        if len(self.matrices) != self.basis.L:
            raise ValueError("need one sparse matrix per basis function")
        self.n_out, self.n_in = self.matrices[0].shape

    @property
    def c_out(self):
        return self.theta.shape[0]

    @property
    def c_in(self):
        return self.theta.shape[1]


def disco_apply(layer, f):
    """Apply a DISCO layer to features ``f`` of shape [C_in x n_in].

    out[c_o, i] = sum_{c_i, l} theta[c_o, c_i, l] * (K^l f[c_i])_i; exactly
    linear in both the features and the coefficients.
    """
    f = np.asarray(f)
    if f.ndim != 2 or f.shape != (layer.c_in, layer.n_in):
        raise ValueError(
            f"feature shape {f.shape} does not match layer [{layer.c_in} x {layer.n_in}]"
        )
    dtype = np.result_type(f.dtype, layer.theta.dtype, np.float64)
    kf = np.empty((layer.c_in, layer.basis.L, layer.n_out), dtype=dtype)
    for ci in range(layer.c_in):
        for ell in range(layer.basis.L):
            kf[ci, ell] = layer.matrices[ell] @ f[ci]
    return np.einsum("oil,iln->on", layer.theta.astype(dtype), kf)


@dataclass
class FnoLayer:
    """One spectral layer: FFT over the angular axes, truncated learnable
    multiplier, inverse FFT, then a pointwise channel map and rectifier.

    ``spectral_weights`` covers only the retained modes
    (|xi_theta| <= J_theta, |xi_phi| <= J_phi, first J_k bins along k) and is
    applied channel-wise; everything outside is zeroed.
    """

    modes: tuple
    spectral_weights: np.ndarray
    pointwise: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.modes = tuple(int(j) for j in self.modes)
        self.spectral_weights = np.asarray(self.spectral_weights, dtype=np.complex128)
        self.pointwise = np.asarray(self.pointwise, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ("relu", "identity"):
            raise ValueError("activation must be 'relu' or 'identity'")
        c = self.spectral_weights.shape[0]
        if self.pointwise.shape != (c, c) or self.bias.shape != (c,):
            raise ValueError("pointwise map and bias must match the channel count")


def _retained_indices(n, j):
    freqs = np.fft.fftfreq(n, d=1.0 / n).astype(np.int64)
    return np.flatnonzero(np.abs(freqs) <= j)


def fno_layer_apply(layer, f):
    """Apply an FNO layer to features [C x N_theta x N_phi x N_k]."""
    f = np.asarray(f, dtype=np.complex128)
    if f.ndim != 4:
        raise ValueError("features must be [C x N_theta x N_phi x N_k]")
    c, n_theta, n_phi, n_k = f.shape
    j_theta, j_phi, j_k = layer.modes
    if j_theta > n_theta // 2 or j_phi > n_phi // 2 or j_k > n_k:
        raise ValueError(
            f"modes {layer.modes} exceed the grid ({n_theta}, {n_phi}, {n_k})"
        )
    it = _retained_indices(n_theta, j_theta)
    ip = _retained_indices(n_phi, j_phi)
    expect = (c, it.size, ip.size, j_k)
    if layer.spectral_weights.shape != expect:
        raise ValueError(
            f"spectral weights shape {layer.spectral_weights.shape}, expected {expect}"
        )
    hat = np.fft.fft2(f, axes=(1, 2))
    kept = hat[:, it[:, None], ip[None, :], :j_k] * layer.spectral_weights
    hat_new = np.zeros_like(hat)
    hat_new[:, it[:, None], ip[None, :], :j_k] = kept
    g = np.fft.ifft2(hat_new, axes=(1, 2))
    out = np.einsum("oc,cxyz->oxyz", layer.pointwise.astype(np.complex128), g)
    out = out + layer.bias[:, None, None, None]
    if layer.activation == "relu":
        out = np.maximum(out.real, 0.0) + 1j * np.maximum(out.imag, 0.0)
    return out


def fno_identity_layer(channels, grid_shape, activation="identity"):
    """Full-spectrum pass-through configuration (M = 1, B = I, b = 0)."""
    n_theta, n_phi, n_k = grid_shape
    modes = (n_theta // 2, n_phi // 2, n_k)
    it = _retained_indices(n_theta, modes[0])
    ip = _retained_indices(n_phi, modes[1])
    weights = np.ones((channels, it.size, ip.size, n_k), dtype=np.complex128)
    return FnoLayer(modes, weights, np.eye(channels), np.zeros(channels), activation)


def fno_random_layer(channels, grid_shape, modes, seed, activation="relu"):
    """Seeded random layer for checks and benchmarks."""
    n_theta, n_phi, _ = grid_shape
    it = _retained_indices(n_theta, modes[0])
    ip = _retained_indices(n_phi, modes[1])
    rng = np.random.default_rng(seed)
    shape = (channels, it.size, ip.size, modes[2])
    weights = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    pointwise = rng.standard_normal((channels, channels)) / np.sqrt(channels)
    bias = rng.standard_normal(channels) * 0.1
    return FnoLayer(tuple(modes), weights, pointwise, bias, activation)


def spectra_to_time_features(f, chain):
    """Inverse DFT along the retained-bin axis, per (channel, theta, phi) fiber.

    Returns real features [C x N_theta x N_phi x N_t]; the imaginary residue
    is exactly zero by the conjugate-symmetric extension.
    """
    from .forward import Spectra, to_time_domain

    f = np.asarray(f, dtype=np.complex128)
    if f.ndim != 4:
        raise ValueError("features must be [C x N_theta x N_phi x N_k]")
    c, n_theta, n_phi, n_k = f.shape
    if n_k != chain.n_freq:
        raise ValueError("feature bins do not match the receive chain")
    flat = f.reshape(c * n_theta * n_phi, n_k)
    psi = Spectra(flat, chain.freq_hz, np.arange(flat.shape[0]))
    traces = to_time_domain(psi, chain)
    return traces.reshape(c, n_theta, n_phi, chain.n_t)


def save_disco_weights(layer, path):
    """Structured-text header plus raw little-endian complex payload."""
    header = {
        "kind": "disco",
        "basis": layer.basis.kind,
        "L": layer.basis.L,
        "r": layer.basis.r,
        "ring_counts": list(layer.basis.ring_counts) if layer.basis.ring_counts else None,
        "c_out": layer.c_out,
        "c_in": layer.c_in,
        "dtype": "c16le",
    }
    with open(str(path) + ".json", "w") as fhead:
        json.dump(header, fhead, indent=1, sort_keys=True)
        fhead.write("\n")
    with open(path, "wb") as fbin:
        fbin.write(np.ascontiguousarray(layer.theta, dtype="<c16").tobytes())


def load_disco_theta(path):
    """Read (basis, theta) back from a weight file pair."""
    with open(str(path) + ".json") as fhead:
        header = json.load(fhead)
    basis = make_kernel_basis(
        header["basis"], header["L"], header["r"],
        tuple(header["ring_counts"]) if header.get("ring_counts") else None,
    )
    theta = np.fromfile(path, dtype="<c16").reshape(
        header["c_out"], header["c_in"], header["L"]
    )
    return basis, theta
