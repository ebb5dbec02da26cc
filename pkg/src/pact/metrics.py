"""Volume-comparison metrics: cosine similarity, PSNR and NMSE.

PSNR and NMSE follow the reference-first convention (first argument is the
ground truth); cosine similarity is symmetric.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import UndefinedMetricError
from .volume import Volume


@dataclass
class MetricReport:
    cosine: float
    psnr_db: float
    nmse: float
    shape: tuple
    ref_file: str = None
    test_file: str = None

    def as_dict(self):
        return {
            "cosine": self.cosine,
            "cosine_percent": 100.0 * self.cosine,
            "psnr_db": "inf" if math.isinf(self.psnr_db) else self.psnr_db,
            "nmse": self.nmse,
            "shape": list(self.shape),
            "ref_file": self.ref_file,
            "test_file": self.test_file,
        }


def _pair(p, q):
    a = p.data if isinstance(p, Volume) else np.asarray(p)
    b = q.data if isinstance(q, Volume) else np.asarray(q)
    if a.shape != b.shape:
        raise UndefinedMetricError(f"volume shapes differ: {a.shape} vs {b.shape}")
    return a.astype(np.float64).ravel(), b.astype(np.float64).ravel()


def cosine_similarity(p, q):
    """Normalized inner product (p . q) / (||p|| ||q||), in [-1, 1]."""
    a, b = _pair(p, q)
    na = math.sqrt(float(np.einsum("i,i->", a, a)))
    nb = math.sqrt(float(np.einsum("i,i->", b, b)))
    if na == 0.0 or nb == 0.0:
        raise UndefinedMetricError("cosine similarity is undefined for a zero volume")
    c = float(np.einsum("i,i->", a, b)) / (na * nb)
    return min(1.0, max(-1.0, c))


def psnr(p_ref, q):
    """10*log10(max(ref)^2 / MSE); +inf when the volumes coincide."""
    a, b = _pair(p_ref, q)
    peak = float(a.max())
    if peak <= 0.0:
        raise UndefinedMetricError("PSNR needs a reference with positive maximum")
    diff = a - b
    mse = float(np.einsum("i,i->", diff, diff)) / a.size
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def nmse(p_ref, q):
    """Squared error normalized by the reference energy: ||p-q||^2 / ||p||^2."""
    a, b = _pair(p_ref, q)
    denom = float(np.einsum("i,i->", a, a))
    if denom == 0.0:
        raise UndefinedMetricError("NMSE is undefined for a zero reference")
    diff = a - b
    return float(np.einsum("i,i->", diff, diff)) / denom


def compare_volumes(p_ref, q, ref_file=None, test_file=None):
    return MetricReport(
        cosine=cosine_similarity(p_ref, q),
        psnr_db=psnr(p_ref, q),
        nmse=nmse(p_ref, q),
        shape=tuple((p_ref.data if isinstance(p_ref, Volume) else p_ref).shape),
        ref_file=ref_file,
        test_file=test_file,
    )
