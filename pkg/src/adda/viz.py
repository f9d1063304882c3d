"""Evaluation artifacts: confusion matrices, exact t-SNE, SVG/CSV emitters.

The t-SNE here is the exact O(N^2) variant: per-point Gaussian bandwidths
calibrated by binary search to hit a target entropy of log2(perplexity)
bits, symmetrized joint probabilities, and plain gradient descent with
the usual early-exaggeration / momentum-switch / per-coordinate gain
schedule. Output files are deterministic byte-for-byte for identical
inputs: plain-text SVG with fixed float formatting and UTF-8 CSV with LF
line endings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

_EPS = np.finfo(np.float64).tiny


class ConfusionMatrix:
    """Row = true label, column = prediction; counts plus normalized view."""

    def __init__(self, counts: np.ndarray):
        counts = np.asarray(counts)
        if counts.shape != (10, 10) or (counts < 0).any():
            raise ValidationError("confusion counts must be a nonnegative 10x10 matrix")
        self.counts = counts.astype(np.int64)

    def total(self) -> int:
        return int(self.counts.sum())

    def empty_rows(self) -> list[int]:
        return [i for i in range(10) if self.counts[i].sum() == 0]

    def normalized(self) -> np.ndarray:
        """Rows divided by their sums; rows with no examples stay all-zero."""
        sums = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        out = np.divide(self.counts, sums, out=np.zeros((10, 10)), where=sums > 0)
        return out


def confusion(predictions, labels) -> ConfusionMatrix:
    preds = np.asarray(predictions)
    labs = np.asarray(labels)
    if preds.shape != labs.shape or preds.ndim != 1:
        raise ValidationError(
            f"predictions {preds.shape} and labels {labs.shape} must be equal-length vectors"
        )
    for name, v in (("predictions", preds), ("labels", labs)):
        if v.size and (v.min() < 0 or v.max() > 9):
            raise ValidationError(f"{name} must lie in [0, 10)")
    counts = np.zeros((10, 10), dtype=np.int64)
    np.add.at(counts, (labs.astype(np.intp), preds.astype(np.intp)), 1)
    return ConfusionMatrix(counts)


# ---------------------------------------------------------------------------
# exact t-SNE


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float = 200.0
    momentum_early: float = 0.5
    momentum_late: float = 0.8
    momentum_switch: int = 250
    sample_cap: int = 1000
    seed: int = 0


@dataclass
class Embedding:
    points: np.ndarray
    labels: np.ndarray
    kl_trace: list[float] = field(default_factory=list)


def pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    np.fill_diagonal(d2, 0.0)
    return d2


def calibrated_conditionals(d2: np.ndarray, perplexity: float,
                            tol: float = 1e-5, max_steps: int = 50) -> np.ndarray:
    """Per-row conditional Gaussians whose Shannon entropy (bits) matches
    log2(perplexity), found by binary search on the precision beta."""
    n = d2.shape[0]
    target = np.log2(perplexity)
    p = np.zeros((n, n))
    ln2 = np.log(2.0)
    for i in range(n):
        di = np.delete(d2[i], i)
        dm = di - di.min()  # softmax shift: keeps the nearest weight at 1
        beta, lo, hi = 1.0, -np.inf, np.inf
        for _ in range(max_steps):
            w = np.exp(-dm * beta)
            sw = w.sum()
            pi = w / sw
            # H in nats = ln(sum w) + beta * E[d - dmin]; convert to bits
            entropy = (np.log(sw) + beta * float(dm @ pi)) / ln2
            if abs(entropy - target) <= tol:
                break
            if entropy > target:  # too flat: raise precision
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == -np.inf else (beta + lo) / 2.0
        row = np.zeros(n)
        row[np.arange(n) != i] = pi
        p[i] = row
    return p


def joint_probabilities(features: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrized joint distribution P = (P_cond + P_cond^T) / 2N."""
    d2 = pairwise_sq_dists(np.asarray(features, dtype=np.float64))
    cond = calibrated_conditionals(d2, perplexity)
    return (cond + cond.T) / (2.0 * d2.shape[0])


def kl_and_gradient(p: np.ndarray, y: np.ndarray,
                    exaggeration: float = 1.0) -> tuple[float, np.ndarray, np.ndarray]:
    """KL(P || Q(y)) with Q from the Student-t kernel, plus dKL/dy.

    The gradient uses ``exaggeration * P``; the returned KL always uses the
    true P. Also returns Q for reuse."""
    n = y.shape[0]
    ysq = (y * y).sum(axis=1)
    num = 1.0 / (1.0 + np.maximum(ysq[:, None] + ysq[None, :] - 2.0 * (y @ y.T), 0.0))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), _EPS)
    w = (exaggeration * p - q) * num
    grad = 4.0 * (w.sum(axis=1)[:, None] * y - w @ y)
    off = ~np.eye(n, dtype=bool)
    kl = float((p[off] * np.log(p[off] / q[off])).sum())
    return kl, grad, q


def tsne_embed(features: np.ndarray, labels, cfg: TsneConfig | None = None) -> Embedding:
    """Exact symmetric-SNE embedding into 2-D with a Student-t kernel.

    Returns mean-centered points plus the per-iteration KL divergence
    (always against the un-exaggerated joint distribution)."""
    cfg = cfg or TsneConfig()
    x = np.asarray(features, dtype=np.float64)
    labs = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != labs.shape[0]:
        raise ValidationError(f"features {x.shape} and labels {labs.shape} do not align")
    n = x.shape[0]
    if n < 3 * cfg.perplexity:
        raise ValidationError(
            f"perplexity {cfg.perplexity} requires at least {int(3 * cfg.perplexity)} points, got {n}"
        )
    if not np.isfinite(x).all():
        raise ValidationError("features must be finite")

    d2 = pairwise_sq_dists(x)
    if d2.max() == 0.0:
        raise ValidationError("degenerate input: all feature vectors are identical")

    cond = calibrated_conditionals(d2, cfg.perplexity)
    p = np.maximum((cond + cond.T) / (2.0 * n), _EPS)

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    y = rng.normal(scale=1e-4, size=(n, 2))
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    kl_trace: list[float] = []

    for it in range(cfg.iterations):
        exaggeration = cfg.early_exaggeration if it < cfg.exaggeration_iters else 1.0
        momentum = cfg.momentum_early if it < cfg.momentum_switch else cfg.momentum_late

        kl, grad, _ = kl_and_gradient(p, y, exaggeration)

        flip = np.sign(grad) != np.sign(velocity)
        gains = np.where(flip, gains + 0.2, gains * 0.8)
        np.clip(gains, 0.01, None, out=gains)
        velocity = momentum * velocity - cfg.learning_rate * (gains * grad)
        y = y + velocity
        y = y - y.mean(axis=0)

        kl_trace.append(kl)

    return Embedding(points=y, labels=labs, kl_trace=kl_trace)


def entropy_bits(p_row: np.ndarray) -> float:
    """Shannon entropy in bits of one conditional distribution row."""
    nz = p_row[p_row > 0]
    return float(-(nz * np.log2(nz)).sum())


# ---------------------------------------------------------------------------
# deterministic emitters

CLASS_COLORS = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)

_SVG_HEAD = '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 800 800">\n'


def emit_csv(path, header: list[str], rows) -> None:
    """UTF-8 CSV, comma-separated, LF endings; floats keep full precision."""

    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        return str(v)

    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def emit_confusion_svg(cm: ConfusionMatrix, path) -> None:
    """10x10 heatmap; each cell carries its row-normalized value to 2 dp."""
    norm = cm.normalized()
    cell = 64.0
    x0 = y0 = 90.0
    parts = [_SVG_HEAD, '<rect width="800" height="800" fill="white"/>\n']
    parts.append(
        '<text x="400" y="40" text-anchor="middle" font-size="20" font-family="monospace">'
        "confusion matrix (rows: true, cols: predicted)</text>\n"
    )
    for i in range(10):
        parts.append(
            f'<text x="{x0 - 18:.1f}" y="{y0 + i * cell + cell / 2 + 5:.1f}" '
            f'text-anchor="middle" font-size="16" font-family="monospace">{i}</text>\n'
        )
        parts.append(
            f'<text x="{x0 + i * cell + cell / 2:.1f}" y="{y0 - 14:.1f}" '
            f'text-anchor="middle" font-size="16" font-family="monospace">{i}</text>\n'
        )
    for i in range(10):
        for j in range(10):
            v = norm[i, j]
            shade = int(round(255 * (1.0 - v)))
            fill = f"#{shade:02x}{shade:02x}ff"
            tx = x0 + j * cell
            ty = y0 + i * cell
            parts.append(
                f'<rect x="{tx:.1f}" y="{ty:.1f}" width="{cell:.1f}" height="{cell:.1f}" '
                f'fill="{fill}" stroke="#444" stroke-width="1"/>\n'
            )
            color = "#000" if v < 0.6 else "#fff"
            parts.append(
                f'<text x="{tx + cell / 2:.1f}" y="{ty + cell / 2 + 5:.1f}" text-anchor="middle" '
                f'font-size="14" font-family="monospace" fill="{color}">{v:.2f}</text>\n'
            )
    parts.append("</svg>\n")
    Path(path).write_bytes("".join(parts).encode("utf-8"))


def emit_embedding_svg(emb: Embedding, path) -> None:
    """Scatter plot of the 2-D embedding with one fixed color per class."""
    pts = np.asarray(emb.points, dtype=np.float64)
    span = max(float(np.abs(pts).max()), 1e-12)
    scale = 360.0 / span  # fit into [-360, 360] around center 400
    parts = [_SVG_HEAD, '<rect width="800" height="800" fill="white"/>\n']
    for i in range(10):
        parts.append(
            f'<circle cx="{20 + 0:.1f}" cy="{20 + i * 22:.1f}" r="6" fill="{CLASS_COLORS[i]}"/>\n'
            f'<text x="34" y="{25 + i * 22:.1f}" font-size="14" font-family="monospace">{i}</text>\n'
        )
    for (px, py), lab in zip(pts, emb.labels):
        parts.append(
            f'<circle cx="{400 + px * scale:.2f}" cy="{400 - py * scale:.2f}" r="4" '
            f'fill="{CLASS_COLORS[int(lab)]}" fill-opacity="0.75"/>\n'
        )
    parts.append("</svg>\n")
    Path(path).write_bytes("".join(parts).encode("utf-8"))
