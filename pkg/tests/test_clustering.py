import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from ensemble_rkhs import (
    DistanceMatrix,
    KernelConfig,
    SampleSet,
    TimeGrid,
    agglomerative_cluster,
    cut_clusters,
    pairwise_mmd,
)


def random_matrix(rng, n):
    pts = rng.normal(size=(n, 3))
    d = ((pts[:, None] - pts[None]) ** 2).sum(-1)
    return DistanceMatrix([f"s{i}" for i in range(n)], d)


def same_partition(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return all(len(set(b[a == c])) == 1 for c in set(a)) and len(set(a)) == len(set(b))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 9), st.sampled_from(["average", "single", "complete"]))
def test_matches_scipy_linkage(seed, n, method):
    dm = random_matrix(np.random.default_rng(seed), n)
    tree = agglomerative_cluster(dm, method)
    ref = linkage(squareform(dm.d, checks=False), method=method)
    np.testing.assert_allclose(np.sort(tree.heights), np.sort(ref[:, 2]), rtol=1e-10, atol=1e-12)
    for k in range(1, n + 1):
        assert same_partition(cut_clusters(tree, k), fcluster(ref, k, "maxclust"))


def test_ties_take_smallest_pair():
    d = np.ones((4, 4)) - np.eye(4)
    tree = agglomerative_cluster(DistanceMatrix(list("abcd"), d))
    assert tree.merges[0][:2] == (0, 1)
    assert tree.merges[1][:2] == (2, 3)
    assert cut_clusters(tree, 2) == [0, 0, 1, 1]


def test_cut_numbering_follows_smallest_leaf():
    d = np.array([[0, 5, 1, 5], [5, 0, 5, 1], [1, 5, 0, 5], [5, 1, 5, 0]], dtype=float)
    tree = agglomerative_cluster(DistanceMatrix(list("abcd"), d))
    assert cut_clusters(tree, 2) == [0, 1, 0, 1]
    assert cut_clusters(tree, 4) == [0, 1, 2, 3]
    assert cut_clusters(tree, 1) == [0, 0, 0, 0]
    with pytest.raises(ValueError):
        cut_clusters(tree, 5)


def test_matrix_validation():
    with pytest.raises(ValueError):
        DistanceMatrix(["a", "b"], np.array([[0, 1], [1.0000001, 0]]))
    with pytest.raises(ValueError):
        DistanceMatrix(["a", "a"], np.zeros((2, 2)))
    with pytest.raises(ValueError):
        agglomerative_cluster(DistanceMatrix(["a", "b"], np.zeros((2, 2))), "ward")


def test_pairwise_mmd_and_exports(tmp_path):
    rng = np.random.default_rng(0)
    g = TimeGrid(1.0, 0.1)
    sets = [SampleSet(g, rng.normal(loc=m, scale=0.1, size=(20, 11, 1))) for m in (0.0, 0.0, 2.0)]
    dm = pairwise_mmd(sets, KernelConfig(1.0), ["x", "y", "z"])
    assert np.array_equal(dm.d, dm.d.T) and np.all(dm.d >= 0)
    assert dm.d[0, 1] < 0.05 < 1.0 < dm.d[0, 2]
    tree = agglomerative_cluster(dm)
    assert cut_clusters(tree, 2) == [0, 0, 1]
    dm.to_csv(tmp_path / "d.csv")
    tree.to_csv(tmp_path / "t.csv")
    doc = json.loads(tree.to_json(tmp_path / "t.json"))
    assert doc["labels"] == ["x", "y", "z"] and len(doc["merges"]) == 2
    assert (tmp_path / "d.csv").read_text().startswith(",x,y,z\n")
