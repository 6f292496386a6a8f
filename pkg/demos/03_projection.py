"""
Do author embeddings cluster by hospital?
=========================================

Projects embedding rows to 2-D with PCA and exact t-SNE. Here the rows are
synthetic (hospital centre plus author noise) so the script runs instantly;
``authorsum project`` does the same on trained checkpoints.
"""

import numpy as np

from authorsum.analysis import ProjectionConfig, pca_2d, projection_svg, silhouette_score, tsne_2d

rng = np.random.default_rng(0)
hospitals = np.repeat([f"hosp_{i}" for i in range(4)], 6)
centres = rng.standard_normal((4, 32)) * 3
rows = centres[np.repeat(np.arange(4), 6)] + rng.standard_normal((24, 32))
names = [f"doc_{i:02d}" for i in range(24)]

pca = pca_2d(rows, names, hospitals)
print("PCA silhouette:", round(silhouette_score(pca.coords, hospitals), 3))

proj = tsne_2d(rows, ProjectionConfig(perplexity=5, iterations=500, seed=0), names, hospitals)
print(f"t-SNE KL: {proj.initial_kl:.3f} -> {proj.final_kl:.3f}")
print("t-SNE silhouette:", round(silhouette_score(proj.coords, hospitals), 3))

with open("projection_demo.svg", "w") as fh:
    fh.write(projection_svg(proj, "synthetic author rows"))
print("wrote projection_demo.svg")
