import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from pcan import retrieval as rt


def db_of(desc, utm, prefix="d"):
    return rt.DescriptorDB(np.asarray(desc, dtype=float), [f"{prefix}{i}" for i in range(len(desc))], utm)


def unit(rng, n, d=8):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_duplicate_database_gives_full_recall():
    rng = np.random.default_rng(0)
    desc, utm = unit(rng, 30), rng.uniform(0, 1000, (30, 2))
    curve = rt.recall_curve(db_of(desc, utm, "q"), db_of(desc, utm))
    assert curve.at1 == 1.0 and curve.top1pct == 1.0


def test_query_never_matches_its_own_entry():
    rng = np.random.default_rng(1)
    desc = unit(rng, 4)
    utm = np.array([[0, 0], [1000, 0], [2000, 0], [3000, 0]], dtype=float)
    db = db_of(desc, utm)
    assert rt.recall_curve(db, db).at1 == 0.0


def test_ranking_ties_break_by_index():
    db = db_of([[1.0, 0], [0, 1.0], [1.0, 0]], np.zeros((3, 2)))
    assert rt.rank([1.0, 0], db).tolist() == [0, 2, 1]


def test_top_one_percent_cutoff():
    rng = np.random.default_rng(2)
    curve = rt.recall_curve(db_of(unit(rng, 3), rng.uniform(0, 10, (3, 2)), "q"),
                            db_of(unit(rng, 250), rng.uniform(0, 10, (250, 2))))
    assert curve.n_top1pct == 3


def test_empty_database_rejected():
    with pytest.raises(ValueError):
        rt.recall_curve(db_of(np.ones((1, 2)), np.zeros((1, 2))), db_of(np.zeros((0, 2)), np.zeros((0, 2))))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_recall_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    q, d = unit(rng, 10, 4), unit(rng, 40, 4)
    qu, du = rng.uniform(0, 200, (10, 2)), rng.uniform(0, 200, (40, 2))
    curve = rt.recall_curve(db_of(q, qu, "q"), db_of(d, du), max_n=25)
    for n in (1, 5, 25):
        assert curve.recall[n - 1] == oracles.recall_at(q.tolist(), qu.tolist(), d.tolist(), du.tolist(), n)
    assert np.all(np.diff(curve.recall) >= 0)


def test_descriptor_file_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    db = db_of(unit(rng, 5), rng.uniform(0, 1e6, (5, 2)))
    rt.write_descriptors(tmp_path / "d.bin", db)
    back = rt.read_descriptors(tmp_path / "d.bin")
    assert back.ids == db.ids
    assert back.matrix.tobytes() == db.matrix.tobytes() and back.utm.tobytes() == db.utm.tobytes()


def test_descriptor_file_errors(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"123")
    with pytest.raises(rt.DescriptorFormatError):
        rt.read_descriptors(tmp_path / "x.bin")
    rng = np.random.default_rng(4)
    rt.write_descriptors(tmp_path / "y.bin", db_of(unit(rng, 2), np.zeros((2, 2))))
    (tmp_path / "y.bin.meta.tsv").write_text("d0\t0.0\t0.0\n")
    with pytest.raises(rt.DescriptorFormatError):
        rt.read_descriptors(tmp_path / "y.bin")


def test_recall_file_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    curve = rt.recall_curve(db_of(unit(rng, 6), rng.uniform(0, 60, (6, 2)), "q"),
                            db_of(unit(rng, 20), rng.uniform(0, 60, (20, 2))))
    rt.write_recall(tmp_path / "r.tsv", curve)
    back = rt.read_recall(tmp_path / "r.tsv")
    assert back["recall@1"] == curve.at1 and back["recall@top1%"] == curve.top1pct
    assert [back["curve"][n] for n in range(1, 26)] == curve.recall.tolist()
