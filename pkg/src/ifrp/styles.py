"""Style ranking by Gram-matrix statistics.

A style is summarized by per-layer Gram matrices of feature maps; styles are
ranked by the sum over layers of the Log-Euclidean distance to the average
Gram matrix of real faces. The k most distant styles are the most distinct
from face statistics and get picked for training.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg


@dataclass(frozen=True)
class StyleDescriptor:
    """Per-layer Gram matrices summarizing one style image."""

    style_id: str
    grams: tuple

    def __post_init__(self):
        for g in self.grams:
            g = np.asarray(g)
            if g.ndim != 2 or g.shape[0] != g.shape[1]:
                raise ValueError(f"{self.style_id}: gram must be square, got {g.shape}")
            if np.abs(g - g.T).max() > 1e-9:
                raise ValueError(f"{self.style_id}: gram not symmetric within 1e-9")
            if linalg.eigvalsh(g).min() < -1e-9:
                raise ValueError(f"{self.style_id}: gram has eigenvalue below -1e-9")


def gram_matrix(features: np.ndarray) -> np.ndarray:
    """G = F F^T / (C*H*W) for a C x H x W feature array (symmetric PSD)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3:
        raise ValueError(f"expected C x H x W features, got shape {features.shape}")
    c, h, w = features.shape
    flat = features.reshape(c, h * w)
    g = flat @ flat.T / (c * h * w)
    return (g + g.T) / 2.0


def _sym_logm(a: np.ndarray, eps: float) -> np.ndarray:
    w, v = linalg.eigh(a + eps * np.eye(a.shape[0]))
    if w.min() <= 0:
        raise ValueError(f"matrix not positive definite after eps={eps} (min eig {w.min()})")
    return (v * np.log(w)) @ v.T


def log_euclidean_distance(a: np.ndarray, b: np.ndarray, eps: float = None) -> float:
    """Frobenius distance between matrix logarithms of two SPD matrices.

    eps regularizes each side before the log. When omitted, each matrix gets
    its own eps = 1e-6 * trace / C (Grams of real features are often
    rank-deficient); the per-side rule keeps d(A, B) == d(B, A) exact.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"need equal square matrices, got {a.shape} and {b.shape}")
    for name, m in (("A", a), ("B", b)):
        if np.abs(m - m.T).max() > 1e-6:
            raise ValueError(f"{name} is not symmetric within 1e-6")
    if eps is None:
        eps_a = 1e-6 * np.trace(a) / a.shape[0]
        eps_b = 1e-6 * np.trace(b) / b.shape[0]
    else:
        if eps <= 0:
            raise ValueError("eps must be positive")
        eps_a = eps_b = eps
    diff = _sym_logm((a + a.T) / 2.0, eps_a) - _sym_logm((b + b.T) / 2.0, eps_b)
    return float(np.linalg.norm(diff, "fro"))


def mean_grams(face_features) -> list:
    """Average per-layer Gram matrices over a stream of per-face feature lists.

    face_features yields, per real face, a list of C_l x H_l x W_l arrays (one
    per tapped layer). The reduction is a running mean, so the stream never
    needs to fit in memory at once.
    """
    sums = None
    count = 0
    for layers in face_features:
        grams = [gram_matrix(f) for f in layers]
        if sums is None:
            sums = grams
        else:
            if len(grams) != len(sums):
                raise ValueError("inconsistent number of feature layers across faces")
            sums = [s + g for s, g in zip(sums, grams)]
        count += 1
    if count == 0:
        raise ValueError("no real faces supplied")
    return [s / count for s in sums]


def style_distances(styles, reference_grams, eps: float = None) -> dict:
    """Total Log-Euclidean distance of each style descriptor to the reference."""
    out = {}
    for sd in styles:
        if len(sd.grams) != len(reference_grams):
            raise ValueError(f"{sd.style_id}: {len(sd.grams)} gram layers vs {len(reference_grams)} reference")
        out[sd.style_id] = sum(
            log_euclidean_distance(g, ref, eps=eps) for g, ref in zip(sd.grams, reference_grams)
        )
    return out


def rank_styles(styles, real_face_features, k: int, eps: float = None) -> list:
    """The k style ids most distant from the mean real-face Gram, descending.

    Distances sum per-layer Log-Euclidean terms; ties break lexicographically
    by style id, making the order total and input-permutation invariant.
    """
    styles = list(styles)
    if not styles:
        raise ValueError("no styles to rank")
    if k > len(styles):
        raise ValueError(f"k={k} exceeds {len(styles)} styles")
    reference = mean_grams(real_face_features)
    dists = style_distances(styles, reference, eps=eps)
    ranked = sorted(dists, key=lambda sid: (-dists[sid], sid))
    return ranked[:k]
