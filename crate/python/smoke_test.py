"""Smoke test for the angletree extension module."""

import math
import os
import tempfile

import angletree as at


def main():
    data = at.gen_sphere(4000, 5, 20, seed=1)
    assert len(data) == 4000 and data.dim == 20

    tree = at.AngleTree.build(data, tree_type="rp", min_size=30, angle_samples=500, seed=1)
    stats = tree.build_stats()
    assert stats["angle_evals"] == 500 * tree.internal_count

    for i in range(0, 4000, 400):
        q = data.row(i)
        got = tree.knn_search(data, q, k=3, exclude=i)
        truth = at.brute_force(data, q, k=3, exclude=i)
        assert len(got) == 3 and got.distances == sorted(got.distances)
        assert got.distances[0] >= truth.distances[0]
        assert truth.distance_evals == 3999

    kd = at.AngleTree.build(data, tree_type="kd", angle_samples=0, seed=1)
    for i in range(0, 4000, 500):
        q = data.row(i)
        assert kd.knn_search(data, q, k=2, exclude=i).neighbor_ids == at.brute_force(data, q, k=2, exclude=i).neighbor_ids

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "t.tree")
        tree.save(path)
        assert at.AngleTree.load(path).to_bytes() == tree.to_bytes()
        csv_path = os.path.join(tmp, "d.csv")
        data.save(csv_path)
        assert at.Dataset.load(csv_path).to_list() == data.to_list()

    forest = at.Forest.build_rp(data, 3, max_depth=6, seed=2)
    assert len(forest) == 3 and len(forest.probe(data, data.row(0), exclude=0)) == 1

    report = at.run_queries(tree, data, n_queries=50, exclude_self=True, seed=3)
    assert 0.0 <= report["recall"] <= 1.0

    assert at.error_region_ratio(10, 2, 0.05, math.pi / 2) == 0.0
    assert abs(at.segment_ratio(2, math.pi / 6) - 1.0 / 3.0) < 1e-9
    assert 0.0 < at.miss_probability(3, math.radians(10), 2000) < 1.0
    assert math.isclose(at.ball_volume(2, 1.0), math.pi)

    try:
        at.Dataset([[1.0, float("nan")]])
    except ValueError:
        pass
    else:
        raise AssertionError("non-finite input accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
