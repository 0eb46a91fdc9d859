import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aal.datasets import AffinityDataset, generate_blobs
from aal.errors import ConfigError, ParseError, PreconditionError
from aal.pool import PoolState, add_batch, delete_batch, init_pool, query_labels


def small_pool(labeled, size=4):
    return PoolState(size, {i: 0 for i in labeled}, frozenset(range(size)) - set(labeled))


def test_init_pool_full():
    pool = init_pool(100, 100, 7)
    assert sorted(pool.labeled) == list(range(100))
    assert pool.unlabeled == frozenset()


def test_init_pool_kiba_scale_counts():
    pool = init_pool(118254, 64, 0)
    assert (pool.n_labeled, pool.n_unlabeled) == (64, 118190)
    pool.check_invariants()


def test_init_pool_deterministic():
    assert init_pool(50, 10, 3).labeled_ids == init_pool(50, 10, 3).labeled_ids
    assert init_pool(50, 10, 3).labeled_ids != init_pool(50, 10, 4).labeled_ids


@pytest.mark.parametrize("m0", [0, -1, 101])
def test_init_pool_bad_m0(m0):
    with pytest.raises(ConfigError):
        init_pool(100, m0, 0)


def test_add_and_delete_basic():
    pool = small_pool([1])
    pool = add_batch(pool, [2])
    assert set(pool.labeled) == {1, 2} and pool.unlabeled == {0, 3}
    pool = delete_batch(pool, [2])
    assert set(pool.labeled) == {1} and pool.unlabeled == {0, 2, 3}


def test_add_errors():
    pool = small_pool([1])
    with pytest.raises(PreconditionError, match="already labeled"):
        add_batch(pool, [1])
    with pytest.raises(PreconditionError, match="unknown"):
        add_batch(pool, [99])


def test_delete_unlabeled_errors():
    with pytest.raises(PreconditionError):
        delete_batch(small_pool([1]), [3])


def test_states_are_immutable_snapshots():
    before = small_pool([1])
    after = add_batch(before, [2])
    assert 2 not in before.labeled and 2 in after.labeled


def test_readd_keeps_newer_iteration():
    pool = init_pool(10, 3, 0)
    sid = pool.labeled_ids[0]
    pool = delete_batch(pool.advance(), [sid])
    pool = pool.advance().advance()
    pool = add_batch(pool, [sid])
    assert list(pool.labeled).count(sid) == 1
    assert pool.labeled[sid] == 3
    assert pool.deletions[0].deleted_at == 1 and pool.deletions[0].added_at == 0


def test_growth_with_deletions():
    pool = init_pool(1000, 64, 1)
    rng = np.random.default_rng(0)
    for t in range(1, 6):
        pool = pool.advance()
        pool = add_batch(pool, rng.choice(sorted(pool.unlabeled), 64, replace=False))
        pool = delete_batch(pool, rng.choice(pool.labeled_ids, 8, replace=False))
        assert pool.n_labeled == 64 + 56 * t


def test_query_labels():
    ds = AffinityDataset.from_dense(np.array([[1.5, 2.0], [3.0, 4.0]]))
    assert query_labels(ds, []) == []
    assert query_labels(ds, [ds.sample_id(0, 0)])[0].value == 1.5
    blobs = generate_blobs(3, 4, 2, 1.0, 0.5, 0)
    assert query_labels(blobs, [5]) == query_labels(blobs, [5])
    with pytest.raises(IndexError):
        query_labels(blobs, [12])


def test_text_round_trip():
    pool = init_pool(20, 5, 2).advance()
    pool = add_batch(pool, [max(pool.unlabeled)])
    again = PoolState.from_text(pool.to_text(), 20)
    assert again.labeled == pool.labeled and list(again.labeled) == list(pool.labeled)
    assert again.iteration == pool.iteration and again.unlabeled == pool.unlabeled


@pytest.mark.parametrize("text,line", [
    ("3\t0\n", 1),
    ("# iteration=0\n1\t0\n1\t0\n", 3),
    ("# iteration=0\n1 0\n", 2),
    ("# iteration=0\n1\tx\n", 2),
    ("# iteration=0\n50\t0\n", 2),
])
def test_text_parse_errors_name_line(text, line):
    with pytest.raises(ParseError, match=f"line {line}"):
        PoolState.from_text(text, 10)


@settings(max_examples=200, deadline=None)
@given(
    size=st.integers(1, 60),
    data=st.data(),
)
def test_random_sequences_keep_partition(size, data):
    m0 = data.draw(st.integers(1, size))
    pool = init_pool(size, m0, data.draw(st.integers(0, 2**31)))
    pool.check_invariants()
    for _ in range(data.draw(st.integers(0, 8))):
        pool = pool.advance()
        if pool.unlabeled and data.draw(st.booleans()):
            batch = data.draw(st.sets(st.sampled_from(sorted(pool.unlabeled)), max_size=5))
            n = pool.n_labeled
            pool = add_batch(pool, batch)
            assert pool.n_labeled == n + len(batch)
            assert all(pool.labeled[i] == pool.iteration for i in batch)
        if pool.labeled:
            batch = data.draw(st.sets(st.sampled_from(pool.labeled_ids), max_size=3))
            n = pool.n_labeled
            pool = delete_batch(pool, batch)
            assert pool.n_labeled == n - len(batch)
        pool.check_invariants()
