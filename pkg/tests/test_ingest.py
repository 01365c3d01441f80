import os
import tempfile

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bismarck import Example, Model
from bismarck.errors import ChecksumError, ModelFileError, ParseError
from bismarck.ingest import (MAGIC, detect_format, load_dataset, load_model, load_portfolio,
                             parse_dense, parse_sparse, parse_triple, read_model_file,
                             save_model, serialize, write_dataset)
from bismarck.synth import sparse_classification

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


def test_parse_dense_examples():
    ex = parse_dense("1,0.5,2.0", classification=True)
    assert ex.y == 1.0 and ex.x.tolist() == [0.5, 2.0]
    ex = parse_dense("-1,0,0")
    assert ex.y == -1.0 and ex.x.tolist() == [0.0, 0.0]
    with pytest.raises(ParseError):
        parse_dense("2,1.0", classification=True)
    with pytest.raises(ParseError):
        parse_dense("1")
    with pytest.raises(ParseError, match="line 4"):
        parse_dense("1,abc", lineno=4)
    with pytest.raises(ParseError):
        parse_dense("1,2,3", dim=3)


def test_parse_sparse_examples():
    ex = parse_sparse("1 2:0.5 7:1.25")
    assert ex.y == 1.0
    assert list(zip(ex.indices.tolist(), ex.values.tolist())) == [(2, 0.5), (7, 1.25)]
    ex = parse_sparse("-1")
    assert ex.y == -1.0 and ex.indices.size == 0
    with pytest.raises(ParseError, match="ascending"):
        parse_sparse("1 7:1 2:5")
    with pytest.raises(ParseError, match="duplicate"):
        parse_sparse("1 2:1 2:5")
    with pytest.raises(ParseError):
        parse_sparse("1 2=0.5")
    with pytest.raises(ParseError):
        parse_sparse("1 -2:0.5")


def test_parse_triple_examples():
    ex = parse_triple("0,3,4.5")
    assert (ex.i, ex.j, ex.y) == (0, 3, 4.5)
    ex = parse_triple("5,5,0")
    assert (ex.i, ex.j, ex.y) == (5, 5, 0.0)
    with pytest.raises(ParseError, match="line 9"):
        parse_triple("a,1,2", lineno=9)
    with pytest.raises(ParseError, match="negative"):
        parse_triple("-1,1,2")
    with pytest.raises(ParseError):
        parse_triple("1,1,x")


def test_locale_independent_numbers():
    with pytest.raises(ParseError):
        parse_dense("1,0;5")
    with pytest.raises(ParseError):
        parse_triple("1,1,1e")
    assert parse_dense("1,1e-3,-.5").x.tolist() == [1e-3, -0.5]


@given(finite, st.lists(finite, min_size=1, max_size=8))
def test_dense_round_trip(y, xs):
    ex = Example.dense(xs, y)
    back = parse_dense(serialize(ex))
    assert back.y == ex.y and back.x.tolist() == ex.x.tolist()


@given(finite, st.dictionaries(st.integers(0, 10**6), finite, max_size=8))
def test_sparse_round_trip(y, pairs):
    idx = sorted(pairs)
    ex = Example.sparse(idx, [pairs[i] for i in idx], y)
    back = parse_sparse(serialize(ex))
    assert back.indices.tolist() == idx
    assert back.values.tolist() == ex.values.tolist() and back.y == y


@given(st.integers(0, 10**6), st.integers(0, 10**6), finite)
def test_triple_round_trip(i, j, v):
    back = parse_triple(serialize(Example.cell(i, j, v)))
    assert (back.i, back.j, back.y) == (i, j, v)


def test_load_infers_dims_and_keeps_order(tmp_path):
    p = tmp_path / "d.sparse"
    p.write_text("# comment\n1 2:0.5 7:1.25\n\n-1\n-1 0:3\n")
    ds, header = load_dataset(str(p), classification=True)
    assert header.N == 3 and header.dims == (8,) and header.format == "SparseIndexed"
    assert ds.y.tolist() == [1.0, -1.0, -1.0]
    assert ds[2].indices.tolist() == [0]
    assert len(header.checksum) == 64


def test_declared_dims(tmp_path):
    p = tmp_path / "d.sparse"
    p.write_text("#dims 20\n1 2:0.5\n")
    ds, _ = load_dataset(str(p))
    assert ds.dim == 20
    p.write_text("#dims 3\n1 7:0.5\n")
    with pytest.raises(ParseError):
        load_dataset(str(p))
    p.write_text("1 1:0.5\n#dims 3\n")
    with pytest.raises(ParseError):
        load_dataset(str(p))


def test_triples_counts(tmp_path):
    p = tmp_path / "m.triples"
    p.write_text("0,1,1.0\n2,1,2.0\n0,0,3.0\n1,3,4.0\n")
    ds, header = load_dataset(str(p))
    assert header.dims == (3, 4)
    assert ds.row_counts.tolist() == [2, 1, 1]
    assert ds.col_counts.tolist() == [1, 2, 0, 1]
    assert ds.row_counts.sum() == ds.col_counts.sum() == len(ds)


def test_dense_arity_in_file(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,0.5,2.0\n1,0.5\n")
    with pytest.raises(ParseError, match="line 2"):
        load_dataset(str(p))


def test_write_then_load(tmp_path):
    ds = sparse_classification(40, 30, 4, seed=2)
    p = tmp_path / "x.sparse"
    write_dataset(ds, str(p), declare_dims=True)
    back, _ = load_dataset(str(p), classification=True)
    assert back.checksum == ds.checksum


def test_formats_and_errors(tmp_path):
    assert detect_format("a.svm") == "sparse"
    assert detect_format("a.txt", "triples") == "triples"
    with pytest.raises(ValueError):
        detect_format("a.txt")
    empty = tmp_path / "e.csv"
    empty.write_text("# nothing\n")
    with pytest.raises(ParseError):
        load_dataset(str(empty))


def test_portfolio_file(tmp_path):
    p = tmp_path / "p.txt"
    p.write_text("0.1,0.2\n1,0\n0,2\n")
    ret, sigma = load_portfolio(str(p))
    assert ret.tolist() == [0.1, 0.2] and sigma.tolist() == [[1, 0], [0, 2]]
    p.write_text("0.1,0.2\n1,0\n")
    with pytest.raises(ParseError):
        load_portfolio(str(p))


# ------------------------------------------------------------------ model files


def test_model_round_trip(tmp_path):
    p = tmp_path / "m.model"
    save_model(Model.vector([0.1, -0.2]), {"task": "svm", "seed": 4, "epochs": 7,
                                           "schedule": "divergent alpha0=0.5"}, str(p))
    assert load_model(str(p)).w.tolist() == [0.1, -0.2]
    mf = read_model_file(str(p))
    assert (mf.task, mf.seed, mf.epochs, mf.schedule) == ("svm", 4, 7, "divergent alpha0=0.5")
    assert p.read_text().startswith(MAGIC + "\n")


@given(st.lists(finite, min_size=1, max_size=30))
def test_vector_round_trip_bit_exact(ws):
    fd, path = tempfile.mkstemp()
    os.close(fd)
    try:
        save_model(Model.vector(ws), {"task": "ls"}, path)
        assert np.array_equal(load_model(path).w, np.array(ws))
    finally:
        os.unlink(path)


def test_factor_round_trip(tmp_path, rng):
    L, R = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    p = tmp_path / "f.model"
    save_model(Model.factors(L, R), {"task": "lmf"}, str(p))
    m = load_model(str(p))
    assert m.shape == (4, 5, 3)
    assert np.array_equal(m.L, L) and np.array_equal(m.R, R)


def test_truncated_model_detected(tmp_path):
    p = tmp_path / "m.model"
    save_model(Model.vector(np.arange(10.0)), {"task": "ls"}, str(p))
    text = p.read_text()
    p.write_text(text[: len(text) // 2])
    with pytest.raises(ChecksumError):
        load_model(str(p))
    lines = text.splitlines()
    p.write_text("\n".join(lines[:-3] + lines[-1:]) + "\n")
    with pytest.raises(ChecksumError):
        load_model(str(p))


def test_version_mismatch(tmp_path):
    p = tmp_path / "m.model"
    save_model(Model.vector([1.0]), {"task": "ls"}, str(p))
    p.write_text(p.read_text().replace(MAGIC, "BISMARCK-MODEL v2"))
    with pytest.raises(ModelFileError, match="version"):
        load_model(str(p))
    p.write_text("hello\n")
    with pytest.raises(ModelFileError):
        load_model(str(p))
