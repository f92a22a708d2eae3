"""Writes the three-blob embedding fixture and the cluster counts that
scikit-learn's DBSCAN (cosine metric) finds on it for every sweep cell."""
import numpy as np
from sklearn.cluster import DBSCAN

rng = np.random.default_rng(20230330)
dim = 8
rows = []
for blob, sigma in enumerate([0.12, 0.25, 0.40]):
    center = np.zeros(dim)
    center[blob] = 1.0
    for _ in range(25):
        rows.append((f"b{blob}", center + rng.normal(0, sigma, dim)))
for k in range(6):
    rows.append(("noise", rng.normal(0, 1, dim)))

X = np.array([np.round(v, 6) for _, v in rows])
with open("tests/data/three_blobs.tsv", "w") as f:
    f.write("# id\tblob\tv0..v7\n")
    for i, ((label, _), v) in enumerate(zip(rows, X)):
        f.write(f"p{i:02d}\t{label}\t" + "\t".join(f"{x:.6f}" for x in v) + "\n")

eps_grid = [(10 + 5 * i) / 100 for i in range(15)]
with open("tests/data/three_blobs_sweep_expected.tsv", "w") as f:
    f.write("eps\tmin_pts\tclusters\tnoise\n")
    for eps in eps_grid:
        for m in range(2, 7):
            lab = DBSCAN(eps=eps, min_samples=m, metric="cosine", algorithm="brute").fit(X).labels_
            k = len(set(lab) - {-1})
            f.write(f"{eps:.2f}\t{m}\t{k}\t{int((lab == -1).sum())}\n")

from sklearn.metrics.pairwise import cosine_distances
D = cosine_distances(X)
margin = np.min(np.abs(D - 0.3))
print("min |d - 0.3| =", margin)
