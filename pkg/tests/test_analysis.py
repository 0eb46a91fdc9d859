import numpy as np
import pytest

from aal.analysis import (build_deletion_origin_graph, build_ranked_grid, checkpoint_rows,
                          distribution_shift_series, features_csv, shift_csv)
from aal.datasets import AffinityDataset, generate_bilinear_affinity, generate_blobs
from aal.engine import ExperimentConfig, IterationRecord, TrajectoryLog, make_family, run_experiment
from aal.errors import UnsupportedOperation
from aal.learners import TrainConfig
from aal.metrics import checkpoint_kl


def scripted_log(rows):
    """rows: (iteration, added, deleted, histogram)."""
    size = 0
    records = []
    for t, added, deleted, hist in rows:
        size += len(added) - len(deleted)
        records.append(IterationRecord(t, size, None, tuple(added), tuple(deleted), tuple(hist)))
    return TrajectoryLog("classification", records)


def test_grid_orders_by_mean_affinity():
    ds = AffinityDataset.from_dense(np.array([[1.0, 2.0], [3.0, 4.0]]))
    log = scripted_log([(0, [ds.sample_id(1, 1), ds.sample_id(0, 0)], [], [2])])
    grid = build_ranked_grid(ds, log)
    assert np.nanmean(ds.scores, axis=1).tolist() == [1.5, 3.5]
    assert grid.to_grid(1, 1) == (1, 1)
    assert grid.to_grid(0, 0) == (0, 0)
    assert grid.cells == [(0, 1, 1, "add"), (0, 0, 0, "add")]
    assert grid.to_csv().splitlines()[0] == "iteration,grid_x,grid_y,event"


def test_grid_constant_matrix_uses_index_order():
    ds = AffinityDataset.from_dense(np.full((3, 4), 2.0))
    grid = build_ranked_grid(ds, scripted_log([]))
    assert grid.drug_order.tolist() == [0, 1, 2]
    assert grid.protein_order.tolist() == [0, 1, 2, 3]


def test_grid_is_bijection():
    ds = generate_bilinear_affinity(7, 5, 2, 0.1, 3)
    grid = build_ranked_grid(ds, scripted_log([]))
    cells = {grid.to_grid(d, p) for d in range(7) for p in range(5)}
    assert len(cells) == 35
    for d in range(7):
        for p in range(5):
            assert grid.from_grid(*grid.to_grid(d, p)) == (d, p)


def test_grid_rejects_classification():
    with pytest.raises(UnsupportedOperation):
        build_ranked_grid(generate_blobs(2, 3, 2, 1.0, 1.0, 0), scripted_log([]))


def test_origin_graph_examples():
    assert build_deletion_origin_graph(scripted_log([(0, [1, 2], [], [])])).edges == {}
    log = scripted_log([(0, [1], [], []), (1, [], [], []), (2, [7], [], []), (3, [], [], []),
                        (4, [], [], []), (5, [], [7], [])])
    graph = build_deletion_origin_graph(log)
    assert graph.edges == {(5, 2): 1}
    assert graph.node_sizes == {2: 1}
    assert graph.edges_csv() == "deletion_iter,addition_iter,count\n5,2,1\n"


def test_origin_graph_readd_uses_latest_addition():
    log = scripted_log([(0, [1, 2], [], []), (1, [], [1], []), (2, [1], [], []), (3, [], [1], [])])
    graph = build_deletion_origin_graph(log)
    assert graph.edges == {(1, 0): 1, (3, 2): 1}
    assert graph.node_sizes == {0: 1, 2: 1}


def test_origin_graph_same_iteration_edge():
    graph = build_deletion_origin_graph(scripted_log([(0, [1], [], []), (1, [2, 3], [3], [])]))
    assert graph.edges == {(1, 1): 1}


def test_origin_graph_malformed_stream():
    with pytest.raises(ValueError):
        build_deletion_origin_graph(scripted_log([(0, [1], [], []), (1, [], [5], [])]))


def test_origin_graph_conservation_on_real_run():
    ds = generate_bilinear_affinity(20, 15, 2, 0.1, 0)
    cfg = ExperimentConfig(m0=16, n_add=16, n_delete=8, max_iterations=10, committee_size=2,
                           coverage_k=20, embed_dim=4, add_policy="hybrid(greedy:8,variance:8)",
                           del_policy="hybrid(greedy:8,variance:8)",
                           train=TrainConfig(learning_rate=0.05, batch_size=16, max_epochs=3, patience=3))
    log = run_experiment(ds, cfg)
    graph = build_deletion_origin_graph(log)
    n_deletes = sum(1 for _, e, _ in log.events() if e == "delete")
    assert n_deletes == 80
    assert graph.total == 80 == sum(graph.node_sizes.values())
    assert all(m >= n for m, n in graph.edges)


def test_shift_examples_and_rows():
    log = scripted_log([(t, [t], [], [t + 1, 10 - t]) for t in range(11)])
    assert distribution_shift_series(log, [0, 0]) == [0.0]
    assert checkpoint_rows(log, [0, 0.1, 1.0]) == [0, 1, 10]
    vals = distribution_shift_series(log, [0, 0.1, 1.0])
    assert vals == [checkpoint_kl([2, 9], [1, 10]), checkpoint_kl([11, 0], [2, 9])]
    assert all(v >= 0 for v in vals)
    assert shift_csv([0, 0.1, 1.0], vals).count("\n") == 3


@pytest.mark.parametrize("points", [[0.5], [0, 1.5], [-0.1, 1]])
def test_shift_bad_checkpoints(points):
    log = scripted_log([(0, [1], [], [1, 0]), (1, [2], [], [1, 1])])
    with pytest.raises(ValueError):
        distribution_shift_series(log, points)


def test_shift_matches_recomputation_from_events():
    ds = generate_blobs(3, 20, 2, 2.0, 1.0, 0)
    cfg = ExperimentConfig(m0=10, n_add=6, n_delete=2, max_iterations=10, committee_size=2,
                           add_policy="entropy", del_policy="rank_ensemble(entropy:1,diversity:1)",
                           train=TrainConfig(learning_rate=0.2, batch_size=8, max_epochs=3, patience=3))
    log = run_experiment(ds, cfg)
    labeled: set[int] = set()
    hist_at = {}
    events = log.events()
    for rec in log.records:
        for t, event, sid in events:
            if t == rec.iteration:
                (labeled.add if event == "add" else labeled.remove)(sid)
        hist_at[rec.iteration] = np.bincount(ds.targets[sorted(labeled)], minlength=3)
    expected = [checkpoint_kl(hist_at[1], hist_at[0]), checkpoint_kl(hist_at[10], hist_at[1])]
    assert distribution_shift_series(log, [0, 0.1, 1.0]) == pytest.approx(expected, rel=1e-12)


def test_features_csv():
    ds = generate_blobs(2, 3, 2, 1.0, 1.0, 0)
    cfg = ExperimentConfig(m0=2, n_add=2, n_delete=0, add_policy="entropy")
    fam = make_family(ds, cfg)
    text = features_csv(fam, fam.init_params(np.random.default_rng(0)), ds, [1, 4])
    lines = text.splitlines()
    assert lines[0] == "sample_id,labeled,f0,f1"
    assert len(lines) == 7
    assert lines[2].startswith("1,1,") and lines[1].startswith("0,0,")
    assert float(lines[1].split(",")[2]) == ds.features[0, 0]
