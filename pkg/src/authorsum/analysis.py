"""Two-dimensional projections of author embeddings, plus a hospital-clustering score.

PCA uses power iteration with deflation. t-SNE is the exact O(n^2) variant:
per-point Gaussian bandwidths come from a binary search on perplexity, the
joint P is symmetrized, and the low-dimensional Student-t affinities are fit
by momentum gradient descent with per-coordinate gains.
"""
from __future__ import annotations

import csv
import html
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .seeding import make_rng

JITTER = 1e-9


@dataclass
class ProjectionConfig:
    method: str = "tsne"
    perplexity: float = 5.0
    iterations: int = 1000
    learning_rate: float = 100.0
    seed: int = 0
    exaggeration: float = 4.0
    exaggeration_iters: int = 100

    def validate(self, n_points: int | None = None) -> None:
        if self.method not in ("pca", "tsne"):
            raise ValueError(f"unknown projection method {self.method!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.perplexity <= 0:
            raise ValueError("perplexity must be positive")
        if n_points is not None and self.perplexity >= n_points:
            raise ValueError(f"perplexity {self.perplexity} must be below the number of points ({n_points})")


@dataclass
class Projection2D:
    names: list[str]
    hospitals: list[str]
    coords: np.ndarray
    initial_kl: float | None = None
    final_kl: float | None = None
    meta: dict = field(default_factory=dict)

    def points(self) -> list[tuple[str, str, float, float]]:
        return [(n, h, float(x), float(y)) for n, h, (x, y) in zip(self.names, self.hospitals, self.coords)]


def _labels(rows: np.ndarray, names, hospitals):
    n = len(rows)
    names = list(names) if names is not None else [f"p{i}" for i in range(n)]
    hospitals = list(hospitals) if hospitals is not None else [""] * n
    if len(names) != n or len(hospitals) != n:
        raise ValueError("one name and hospital per row required")
    return names, hospitals


# ------------------------------------------------------------------ PCA

def _top_eigvec(c: np.ndarray, start: np.ndarray, iters: int = 1000, tol: float = 1e-13) -> np.ndarray:
    v = start / np.linalg.norm(start)
    for _ in range(iters):
        w = c @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return v
        w /= norm
        if np.linalg.norm(w - v) < tol:
            return w
        v = w
    return v


def principal_directions(rows: np.ndarray, k: int = 2, seed: int = 0) -> np.ndarray:
    """Top-``k`` covariance eigenvectors (columns) by power iteration with deflation."""
    x = np.asarray(rows, dtype=np.float64)
    x = x - x.mean(axis=0)
    c = x.T @ x
    d = c.shape[0]
    rng = make_rng(seed, "pca")
    dirs: list[np.ndarray] = []
    for _ in range(min(k, d)):
        v = _top_eigvec(c, rng.standard_normal(d))
        # re-orthogonalize: deflation alone leaves round-off components along earlier directions
        for u in dirs:
            v = v - (u @ v) * u
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            v = rng.standard_normal(d)
            for u in dirs:
                v = v - (u @ v) * u
            norm = np.linalg.norm(v)
        v = v / norm
        lam = v @ c @ v
        c = c - lam * np.outer(v, v)
        dirs.append(v)
    while len(dirs) < k:
        dirs.append(np.zeros(d))
    return np.stack(dirs, axis=1)


def pca_2d(rows, names=None, hospitals=None, seed: int = 0) -> Projection2D:
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise ValueError("PCA needs at least 2 rows")
    names, hospitals = _labels(x, names, hospitals)
    w = principal_directions(x, 2, seed)
    coords = (x - x.mean(axis=0)) @ w
    return Projection2D(names, hospitals, coords, meta={"method": "pca", "seed": seed})


# ------------------------------------------------------------------ t-SNE

def _sq_dists(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2 * x @ x.T
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def conditional_probabilities(d2: np.ndarray, perplexity: float, tol: float = 1e-6,
                              max_iter: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Row-stochastic P_{j|i} with per-row precision found by bisection on the entropy.

    Returns the matrix and the achieved perplexity per row (``2 ** H`` with H in bits).
    """
    n = len(d2)
    target = math.log(perplexity)
    p = np.zeros((n, n))
    achieved = np.zeros(n)
    for i in range(n):
        di = np.delete(d2[i], i)
        di = di - di.min()
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_iter):
            w = np.exp(-di * beta)
            s = w.sum()
            pi = w / s
            h = float(beta * (di * pi).sum() + math.log(s))
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2 if hi == np.inf else (beta + hi) / 2
            else:
                hi = beta
                beta = (beta + lo) / 2
        p[i, np.arange(n) != i] = pi
        achieved[i] = math.exp(h)
    return p, achieved


def joint_probabilities(x: np.ndarray, perplexity: float) -> tuple[np.ndarray, np.ndarray]:
    cond, achieved = conditional_probabilities(_sq_dists(x), perplexity)
    p = (cond + cond.T) / (2 * len(x))
    return p, achieved


def _student_q(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    num = 1.0 / (1.0 + _sq_dists(y))
    np.fill_diagonal(num, 0.0)
    return num / num.sum(), num


def kl_divergence(p: np.ndarray, y: np.ndarray) -> float:
    q, _ = _student_q(y)
    mask = p > 0
    return float((p[mask] * np.log(p[mask] / np.maximum(q[mask], 1e-300))).sum())


def _needs_jitter(x: np.ndarray) -> bool:
    d2 = _sq_dists(x)
    np.fill_diagonal(d2, np.inf)
    return bool((d2 <= 0).any())


def tsne_2d(rows, config: ProjectionConfig | None = None, names=None, hospitals=None) -> Projection2D:
    config = config or ProjectionConfig()
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2 or len(x) < 4:
        raise ValueError("t-SNE needs at least 4 rows")
    config.validate(len(x))
    names, hospitals = _labels(x, names, hospitals)
    meta = {"method": "tsne", "perplexity": config.perplexity, "iterations": config.iterations,
            "learning_rate": config.learning_rate, "seed": config.seed, "jitter": 0.0}
    if _needs_jitter(x):
        x = x + make_rng(config.seed, "jitter").standard_normal(x.shape) * JITTER
        meta["jitter"] = JITTER
    p, achieved = joint_probabilities(x, config.perplexity)
    meta["max_perplexity_error"] = float(np.abs(achieved - config.perplexity).max())
    n = len(x)
    y = make_rng(config.seed, "tsne-init").standard_normal((n, 2)) * 1e-4
    initial_kl = kl_divergence(p, y)
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    # early exaggeration never takes more than a quarter of the run
    n_exag = min(config.exaggeration_iters, config.iterations // 4)
    for it in range(config.iterations):
        pe = p * config.exaggeration if it < n_exag else p
        q, num = _student_q(y)
        pq = (pe - q) * num
        grad = 4 * (np.diag(pq.sum(axis=1)) - pq) @ y
        momentum = 0.5 if it < 250 else 0.8
        same = np.sign(grad) == np.sign(velocity)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        velocity = momentum * velocity - config.learning_rate * gains * grad
        y = y + velocity
        y = y - y.mean(axis=0)
    final_kl = kl_divergence(p, y)
    return Projection2D(names, hospitals, y, initial_kl, final_kl, meta)


def project(rows, config: ProjectionConfig, names=None, hospitals=None) -> Projection2D:
    if config.method == "pca":
        return pca_2d(rows, names, hospitals, config.seed)
    return tsne_2d(rows, config, names, hospitals)


# ------------------------------------------------------------------ clustering score

def silhouette_score(coords, labels: Sequence) -> float:
    """Mean silhouette; points alone in their cluster contribute 0."""
    x = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if len(uniq) < 2 or len(uniq) >= len(x):
        raise ValueError("silhouette needs between 2 and n-1 distinct labels")
    d = np.sqrt(_sq_dists(x))
    s = np.zeros(len(x))
    for i in range(len(x)):
        own = labels == labels[i]
        if own.sum() == 1:
            continue
        a = d[i, own].sum() / (own.sum() - 1)
        b = min(d[i, labels == lab].mean() for lab in uniq if lab != labels[i])
        s[i] = 0.0 if max(a, b) == 0 else (b - a) / max(a, b)
    return float(s.mean())


# ------------------------------------------------------------------ output

def projection_csv(proj: Projection2D) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "hospital", "x", "y"])
    for name, hosp, x, y in proj.points():
        w.writerow([name, hosp, repr(x), repr(y)])
    return buf.getvalue()


PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf"]


def projection_svg(proj: Projection2D, title: str = "", meta: dict | None = None, size: int = 480) -> str:
    """Self-contained SVG scatter plot coloured by hospital; ``meta`` goes into a comment."""
    pad = 40
    xy = proj.coords
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    scaled = pad + (xy - lo) / span * (size - 2 * pad)
    hosp_order = sorted(set(proj.hospitals))
    colour = {h: PALETTE[i % len(PALETTE)] for i, h in enumerate(hosp_order)}
    info = dict(proj.meta)
    info.update(meta or {})
    if proj.initial_kl is not None:
        info.update(initial_kl=proj.initial_kl, final_kl=proj.final_kl)
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 20 * len(hosp_order)}">',
             "<!-- " + html.escape(", ".join(f"{k}={v}" for k, v in sorted(info.items()))).replace("--", "- -")
             + " -->",
             f'<rect width="100%" height="100%" fill="white"/>',
             f'<text x="{pad}" y="20" font-size="14">{html.escape(title)}</text>']
    for (x, y), name, hosp in zip(scaled, proj.names, proj.hospitals):
        lines.append(f'<circle cx="{x:.2f}" cy="{size - y:.2f}" r="4" fill="{colour[hosp]}">'
                     f"<title>{html.escape(name)} ({html.escape(hosp)})</title></circle>")
    for i, h in enumerate(hosp_order):
        yy = size + 14 + 20 * i
        lines.append(f'<circle cx="{pad}" cy="{yy - 4}" r="4" fill="{colour[h]}"/>'
                     f'<text x="{pad + 10}" y="{yy}" font-size="12">{html.escape(h)}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
