"""Text dataset formats and model persistence.

Formats
-------
dense   ``label,x0,x1,...``                 (``.csv``)
sparse  ``label idx:val idx:val ...``       (``.sparse``/``.svm``; 0-based, ascending)
triples ``i,j,value``                       (``.triples``/``.cells``)

An optional first line ``#dims d`` (or ``#dims m n`` for triples) declares
dimensions; otherwise they are inferred as 1 + max index.  Other ``#`` lines
and blank lines are ignored.
"""
import hashlib
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ChecksumError, ModelFileError, ParseError
from .model import Model
from .tasks import Example

MAGIC = "BISMARCK-MODEL v1"
_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_INT = re.compile(r"\d+")

FORMATS = ("dense", "sparse", "triples")
_EXTENSIONS = {".csv": "dense", ".sparse": "sparse", ".svm": "sparse", ".libsvm": "sparse",
               ".triples": "triples", ".cells": "triples", ".mtx": "triples"}


def _num(text, lineno, what="value"):
    text = text.strip()
    if not _NUMBER.fullmatch(text):
        raise ParseError(f"non-numeric {what} {text!r}", lineno)
    return float(text)


def _label(text, lineno, classification):
    y = _num(text, lineno, "label")
    if classification:
        if y not in (1.0, -1.0):
            raise ParseError(f"classification label must be +1 or -1, got {text.strip()!r}", lineno)
    return y


def parse_dense(line, classification=False, dim=None, lineno=None):
    fields = line.strip().split(",")
    if len(fields) < 2:
        raise ParseError("dense line needs a label and at least one feature", lineno)
    if dim is not None and len(fields) - 1 != dim:
        raise ParseError(f"expected {dim} features, got {len(fields) - 1}", lineno)
    y = _label(fields[0], lineno, classification)
    x = [_num(f, lineno) for f in fields[1:]]
    return Example.dense(x, y)


def parse_sparse(line, classification=False, lineno=None):
    parts = line.split()
    if not parts:
        raise ParseError("empty sparse line", lineno)
    y = _label(parts[0], lineno, classification)
    idx, val = [], []
    for tok in parts[1:]:
        i, sep, v = tok.partition(":")
        if not sep or not _INT.fullmatch(i):
            raise ParseError(f"malformed pair {tok!r}", lineno)
        j = int(i)
        if idx and j <= idx[-1]:
            what = "duplicate" if j == idx[-1] else "not ascending"
            raise ParseError(f"feature indices {what} at {tok!r}", lineno)
        idx.append(j)
        val.append(_num(v, lineno))
    return Example.sparse(idx, val, y)


def parse_triple(line, lineno=None):
    fields = line.strip().split(",")
    if len(fields) != 3:
        raise ParseError(f"expected i,j,value, got {len(fields)} fields", lineno)
    i, j = fields[0].strip(), fields[1].strip()
    for t in (i, j):
        if t.startswith("-") and _INT.fullmatch(t[1:]):
            raise ParseError(f"negative index {t}", lineno)
        if not _INT.fullmatch(t):
            raise ParseError(f"non-integer index {t!r}", lineno)
    return Example.cell(int(i), int(j), _num(fields[2], lineno))


def serialize(example):
    """Inverse of the matching parse function (round-trip exact)."""
    if example.kind == "dense":
        return ",".join([repr(example.y)] + [repr(float(v)) for v in example.x])
    if example.kind == "sparse":
        pairs = [f"{int(i)}:{float(v)!r}" for i, v in zip(example.indices, example.values)]
        return " ".join([repr(example.y)] + pairs)
    return f"{example.i},{example.j},{example.y!r}"


@dataclass
class DatasetHeader:
    format: str
    N: int
    dims: tuple
    checksum: str


def detect_format(path, fmt=None):
    if fmt:
        if fmt not in FORMATS:
            raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")
        return fmt
    ext = os.path.splitext(path)[1].lower()
    if ext not in _EXTENSIONS:
        raise ValueError(f"cannot infer format from extension {ext!r}; pass a format")
    return _EXTENSIONS[ext]


def load_dataset(path, fmt=None, classification=False):
    """Read a whole file in stored order; returns ``(Dataset, DatasetHeader)``."""
    fmt = detect_format(path, fmt)
    with open(path, "rb") as fh:
        raw = fh.read()
    declared = None
    examples = []
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            if s.startswith("#dims"):
                if examples or declared is not None:
                    raise ParseError("#dims must precede the data", lineno)
                try:
                    declared = tuple(int(t) for t in s.split()[1:])
                except ValueError:
                    raise ParseError(f"bad dims header {s!r}", lineno) from None
            continue
        if fmt == "dense":
            dim = declared[0] if declared else (examples[0].x.size if examples else None)
            examples.append(parse_dense(s, classification, dim, lineno))
        elif fmt == "sparse":
            examples.append(parse_sparse(s, classification, lineno))
        else:
            examples.append(parse_triple(s, lineno))
    if not examples:
        raise ParseError(f"{path}: no examples")
    if fmt == "triples":
        ds = Dataset.from_examples(examples, shape=declared if declared else None)
    else:
        try:
            ds = Dataset.from_examples(examples, dim=declared[0] if declared else None)
        except ValueError as exc:
            raise ParseError(str(exc)) from None
    header = DatasetHeader(ds.format, len(ds), ds.dims, hashlib.sha256(raw).hexdigest())
    return ds, header


def write_dataset(dataset, path, declare_dims=False):
    with open(path, "w") as fh:
        if declare_dims:
            fh.write("#dims " + " ".join(str(d) for d in dataset.dims) + "\n")
        for ex in dataset:
            fh.write(serialize(ex) + "\n")


def load_portfolio(path):
    """First non-comment line: expected returns p; next d lines: rows of the covariance."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if s and not s.startswith("#"):
                rows.append([_num(t, lineno) for t in s.split(",")])
    if not rows:
        raise ParseError(f"{path}: empty portfolio file")
    p = np.array(rows[0])
    sigma = np.array(rows[1:])
    if sigma.shape != (p.size, p.size):
        raise ParseError(f"covariance must be {p.size}x{p.size}, got {sigma.shape}")
    return p, sigma


def portfolio_dataset():
    """The single pseudo-tuple a portfolio objective sums over."""
    return Dataset.dense(np.zeros((1, 0)), [0.0])


# ------------------------------------------------------------------ models


@dataclass
class ModelFile:
    task: str
    model: Model
    seed: int = 0
    schedule: str = ""
    epochs: int = 0
    extra: dict = field(default_factory=dict)


def save_model(model, meta, path):
    """Write ``model`` with ``meta`` (task, seed, schedule, epochs) as a checksummed text file."""
    if model.w is not None:
        dims = f"{model.w.size}"
        coefs = model.w
    else:
        dims = f"{model.L.shape[0]} {model.R.shape[0]} {model.L.shape[1]}"
        coefs = np.concatenate([model.L.ravel(), model.R.ravel()])
    lines = [MAGIC,
             f"task {meta.get('task', 'unknown')}",
             f"dims {dims}",
             f"seed {int(meta.get('seed', 0))}",
             f"schedule {meta.get('schedule', '')}",
             f"epochs {int(meta.get('epochs', 0))}"]
    lines += [repr(float(c)) for c in coefs]
    body = "\n".join(lines) + "\n"
    digest = hashlib.sha256(body.encode()).hexdigest()
    with open(path, "w") as fh:
        fh.write(body + f"checksum {digest}\n")


def read_model_file(path):
    with open(path) as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines or not lines[0].startswith("BISMARCK-MODEL"):
        raise ModelFileError(f"{path}: not a model file")
    if lines[0] != MAGIC:
        raise ModelFileError(f"{path}: unsupported version {lines[0]!r}, expected {MAGIC!r}")
    if not lines[-1].startswith("checksum "):
        raise ChecksumError(f"{path}: missing checksum line (truncated?)")
    body = "\n".join(lines[:-1]) + "\n"
    if hashlib.sha256(body.encode()).hexdigest() != lines[-1].split(" ", 1)[1].strip():
        raise ChecksumError(f"{path}: checksum mismatch (truncated or corrupted)")
    head = {}
    for line in lines[1:6]:
        key, _, value = line.partition(" ")
        head[key] = value
    try:
        dims = [int(t) for t in head["dims"].split()]
        coefs = np.array([float(t) for t in lines[6:-1]], dtype=np.float64)
    except (KeyError, ValueError) as exc:
        raise ModelFileError(f"{path}: malformed model file ({exc})") from None
    if len(dims) == 1:
        if coefs.size != dims[0]:
            raise ModelFileError(f"{path}: expected {dims[0]} coefficients, found {coefs.size}")
        model = Model.vector(coefs)
    elif len(dims) == 3:
        m, n, r = dims
        if coefs.size != (m + n) * r:
            raise ModelFileError(f"{path}: expected {(m + n) * r} coefficients, found {coefs.size}")
        model = Model.factors(coefs[:m * r].reshape(m, r), coefs[m * r:].reshape(n, r))
    else:
        raise ModelFileError(f"{path}: bad dims line")
    return ModelFile(head.get("task", ""), model, int(head.get("seed", 0)),
                     head.get("schedule", ""), int(head.get("epochs", 0)))


def load_model(path):
    return read_model_file(path).model
