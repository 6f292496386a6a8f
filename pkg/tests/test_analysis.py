import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from authorsum.analysis import (
    ProjectionConfig, conditional_probabilities, joint_probabilities, pca_2d, principal_directions,
    projection_csv, projection_svg, silhouette_score, tsne_2d, _sq_dists,
)


def two_clusters(seed=0, n=15, dim=64, sep=10.0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, dim))
    b = rng.standard_normal((n, dim))
    b[:, 0] += sep
    return np.vstack([a, b]), np.array([0] * n + [1] * n)


def two_means_purity(y, labels, iters=50):
    """Lloyd's 2-means from the two farthest points, then majority-label purity."""
    d = np.sqrt(_sq_dists(y))
    i, j = np.unravel_index(np.argmax(d), d.shape)
    c = y[[i, j]].copy()
    for _ in range(iters):
        assign = np.argmin(((y[:, None, :] - c[None]) ** 2).sum(-1), axis=1)
        c = np.stack([y[assign == k].mean(0) if (assign == k).any() else c[k] for k in range(2)])
    hits = sum(np.bincount(labels[assign == k]).max() for k in range(2) if (assign == k).any())
    return hits / len(y)


# ------------------------------------------------------------------ PCA

def test_pca_directions_orthonormal():
    x = np.random.default_rng(0).standard_normal((20, 6))
    w = principal_directions(x)
    assert np.allclose(w.T @ w, np.eye(2), atol=1e-9)


def test_pca_matches_eigendecomposition():
    x = np.random.default_rng(1).standard_normal((30, 5)) * np.array([5, 3, 1, 0.5, 0.1])
    w = principal_directions(x)
    xc = x - x.mean(0)
    vals, vecs = np.linalg.eigh(xc.T @ xc)
    for k in range(2):
        assert abs(abs(w[:, k] @ vecs[:, -1 - k]) - 1) < 1e-9


def test_pca_collinear_second_component_zero():
    t = np.linspace(-1, 1, 9)[:, None]
    x = t * np.array([[1.0, 2.0, -0.5]])
    coords = pca_2d(x).coords
    assert np.var(coords[:, 1]) < 1e-9


def test_pca_isometry_on_2d_data():
    x = np.random.default_rng(2).standard_normal((12, 2))
    coords = pca_2d(x).coords
    assert np.allclose(_sq_dists(coords), _sq_dists(x), atol=1e-6)


def test_pca_duplicate_rows_duplicate_points():
    x = np.random.default_rng(3).standard_normal((6, 4))
    coords = pca_2d(np.vstack([x, x])).coords
    assert np.allclose(coords[:6], coords[6:], atol=1e-12)


def test_pca_needs_two_rows():
    with pytest.raises(ValueError):
        pca_2d(np.zeros((1, 3)))


# ------------------------------------------------------------------ t-SNE internals

@pytest.mark.parametrize("perp", [2.0, 5.0, 9.5])
def test_bandwidth_search_hits_perplexity(perp):
    x = np.random.default_rng(4).standard_normal((25, 8))
    cond, achieved = conditional_probabilities(_sq_dists(x), perp)
    assert np.allclose(cond.sum(1), 1.0, atol=1e-12)
    # independent recomputation of 2^H in bits
    for row in cond:
        nz = row[row > 0]
        assert abs(2 ** (-(nz * np.log2(nz)).sum()) - perp) <= 1e-3
    assert np.all(np.abs(achieved - perp) <= 1e-4)


def test_joint_p_properties():
    x = np.random.default_rng(5).standard_normal((18, 5))
    p, _ = joint_probabilities(x, 5.0)
    assert np.allclose(p, p.T, atol=0) and np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= 1e-9
    assert np.all(np.diag(p) == 0)


# ------------------------------------------------------------------ t-SNE behaviour

@pytest.mark.parametrize("seed", range(3))
def test_tsne_reduces_kl(seed):
    x = np.random.default_rng(seed).standard_normal((20, 10))
    proj = tsne_2d(x, ProjectionConfig(perplexity=5, iterations=300, seed=seed))
    assert proj.final_kl < proj.initial_kl
    assert np.all(np.isfinite(proj.coords)) and proj.coords.shape == (20, 2)


def test_tsne_separates_clusters():
    x, labels = two_clusters()
    proj = tsne_2d(x, ProjectionConfig(perplexity=5, iterations=500, seed=42))
    assert two_means_purity(proj.coords, labels) >= 0.9


def test_tsne_deterministic():
    x = np.random.default_rng(6).standard_normal((10, 4))
    cfg = ProjectionConfig(perplexity=3, iterations=100, seed=7)
    assert tsne_2d(x, cfg).coords.tobytes() == tsne_2d(x, cfg).coords.tobytes()


def test_tsne_errors():
    x = np.random.default_rng(7).standard_normal((6, 3))
    with pytest.raises(ValueError, match="perplexity"):
        tsne_2d(x, ProjectionConfig(perplexity=6))
    with pytest.raises(ValueError):
        tsne_2d(x[:3], ProjectionConfig(perplexity=2))
    with pytest.raises(ValueError):
        ProjectionConfig(iterations=0).validate()


def test_tsne_identical_rows_are_jittered():
    x = np.ones((8, 4))
    proj = tsne_2d(x, ProjectionConfig(perplexity=3, iterations=50))
    assert proj.meta["jitter"] == 1e-9
    assert np.all(np.isfinite(proj.coords))


def test_labels_carried_through():
    x = np.random.default_rng(8).standard_normal((6, 3))
    proj = tsne_2d(x, ProjectionConfig(perplexity=2, iterations=20), names=list("abcdef"), hospitals=list("xxyyzz"))
    assert [p[0] for p in proj.points()] == list("abcdef")
    assert [p[1] for p in proj.points()] == list("xxyyzz")


# ------------------------------------------------------------------ silhouette

def test_silhouette_known_values():
    coords = np.array([[0.0, 0], [0, 1], [10, 0], [10, 1]])
    # a = 1, b = mean(10, sqrt(101)) for every point
    b = (10 + math.sqrt(101)) / 2
    assert silhouette_score(coords, [0, 0, 1, 1]) == pytest.approx((b - 1) / b, abs=1e-12)
    assert silhouette_score(coords, [0, 1, 0, 1]) < 0
    with pytest.raises(ValueError):
        silhouette_score(coords, [0, 0, 0, 0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_silhouette_bounds(seed):
    rng = np.random.default_rng(seed)
    coords = rng.standard_normal((10, 2))
    labels = rng.integers(0, 3, 10)
    if 2 <= len(set(labels)) < 10:
        assert -1.0 <= silhouette_score(coords, labels) <= 1.0


# ------------------------------------------------------------------ output

def test_csv_and_svg():
    x = np.random.default_rng(9).standard_normal((5, 3))
    proj = pca_2d(x, names=list("abcde"), hospitals=["h1", "h1", "h2", "h2", "h3"])
    text = projection_csv(proj)
    assert text.splitlines()[0] == "name,hospital,x,y"
    assert len(text.splitlines()) == 6
    svg = projection_svg(proj, title="demo", meta={"config_hash": "abc"})
    root = ET.fromstring(svg)
    circles = root.findall("{http://www.w3.org/2000/svg}circle")
    assert len(circles) == 5 + 3  # points plus legend markers
    assert "config_hash=abc" in svg
