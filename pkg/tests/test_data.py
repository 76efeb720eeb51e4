import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from comet.data import (Block, SynthSpec, concat_blocks, load_block, shuffle_split,
                        synth_generate, write_block)
from comet.errors import ParseError, ValidationError
from comet.tree import TreeParams, train_tree

from conftest import write_csv


def test_load_basic(tmp_path):
    p = write_csv(tmp_path / "d.csv", ["f0", "f1", "label"], [[1.0, 2.0, 0], [3.0, 4.0, 1]])
    b = load_block(p)
    assert (b.num_features, b.num_classes, len(b)) == (2, 2, 2)
    assert b.X.tolist() == [[1.0, 2.0], [3.0, 4.0]]
    assert b.y.tolist() == [0, 1]


def test_load_header_only(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f0,f1,label\n")
    with pytest.raises(ParseError, match="empty block"):
        load_block(p)


def test_load_bad_feature_names_line(tmp_path):
    p = write_csv(tmp_path / "d.csv", ["f0", "f1", "label"], [[1.0, 2.0, 0], [1.0, "x", 0]])
    with pytest.raises(ParseError) as info:
        load_block(p)
    assert info.value.line == 3
    assert "line 3" in str(info.value)


@pytest.mark.parametrize("row", [[1.0, 2.0], [1.0, 2.0, -1], [1.0, 2.0, 0.5], [1.0, 2.0, "a"]])
def test_load_malformed_rows(tmp_path, row):
    p = write_csv(tmp_path / "d.csv", ["f0", "f1", "label"], [[0.0, 0.0, 0], row])
    with pytest.raises(ParseError) as info:
        load_block(p)
    assert info.value.line == 3


def test_load_label_column_any_position(tmp_path):
    p = write_csv(tmp_path / "d.csv", ["label", "a"], [[2, 1.5], [0, 2.5]])
    b = load_block(p)
    assert b.num_classes == 3 and b.X[:, 0].tolist() == [1.5, 2.5]


def test_load_missing_label_column(tmp_path):
    p = write_csv(tmp_path / "d.csv", ["a", "b"], [[1, 2]])
    with pytest.raises(ParseError):
        load_block(p)


def test_class_override(tmp_path):
    p = write_csv(tmp_path / "d.csv", ["f0", "label"], [[1.0, 0], [2.0, 0]])
    assert load_block(p).num_classes == 2
    assert load_block(p, num_classes=4).num_classes == 4


def test_block_validation():
    with pytest.raises(ValidationError):
        Block(np.zeros((0, 2)), np.zeros(0, dtype=int), 2)
    with pytest.raises(ValidationError):
        Block(np.zeros((2, 2)), np.array([0, 2]), 2)
    with pytest.raises(ValidationError):
        Block(np.zeros((2, 2)), np.array([0, 1]), 1)


def test_round_trip(tmp_path, small_block):
    path = write_block(small_block, tmp_path / "b.csv")
    again = load_block(path)
    assert again == small_block
    np.testing.assert_array_equal(again.X, small_block.X)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e6, 1e6, allow_nan=False), st.integers(0, 3)), min_size=1, max_size=30))
def test_round_trip_property(tmp_path_factory, rows):
    X = np.array([[r[0], -r[0]] for r in rows])
    y = np.array([r[1] for r in rows])
    b = Block(X, y, 4)
    path = write_block(b, tmp_path_factory.mktemp("rt") / "b.csv")
    assert load_block(path, num_classes=4) == b


def _input(tmp_path, n=1000):
    rows = [[i * 0.5, i % 3, i % 2] for i in range(n)]
    return write_csv(tmp_path / "in.csv", ["a", "b", "label"], rows)


def test_shuffle_single_block(tmp_path):
    paths = shuffle_split(_input(tmp_path), 1, 0, tmp_path / "out")
    assert len(paths) == 1
    assert len(load_block(paths[0])) == 1000


def test_shuffle_counts_and_conservation(tmp_path):
    src = _input(tmp_path)
    paths = shuffle_split(src, 4, 42, tmp_path / "out")
    sizes = [len(load_block(p)) for p in paths]
    assert sum(sizes) == 1000
    # P(count outside [150, 350]) for Binomial(1000, 1/4) is below 1e-12 per block
    tail = stats.binom.cdf(149, 1000, 0.25) + stats.binom.sf(350, 1000, 0.25)
    assert tail < 1e-12
    assert all(150 <= s <= 350 for s in sizes)
    original = sorted(src.read_text().splitlines()[1:])
    pieces = sorted(line for p in paths for line in p.read_text().splitlines()[1:])
    assert pieces == original


def test_shuffle_deterministic(tmp_path):
    src = _input(tmp_path)
    a = shuffle_split(src, 3, 9, tmp_path / "a")
    b = shuffle_split(src, 3, 9, tmp_path / "b")
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]
    c = shuffle_split(src, 3, 10, tmp_path / "c")
    assert [p.read_bytes() for p in a] != [p.read_bytes() for p in c]


def test_shuffle_invalid(tmp_path):
    with pytest.raises(ValidationError):
        shuffle_split(_input(tmp_path), 0, 0, tmp_path / "o")


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_shuffle_unwritable(tmp_path):
    out = tmp_path / "ro"
    out.mkdir()
    out.chmod(0o500)
    with pytest.raises(OSError):
        shuffle_split(_input(tmp_path), 2, 0, out)


def test_shuffle_unwritable_file_target(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        shuffle_split(_input(tmp_path), 2, 0, blocker)


def test_synth_deterministic():
    spec = SynthSpec(200, 3, 3, 2.0, 0.1)
    assert synth_generate(spec, 4) == synth_generate(spec, 4)
    assert synth_generate(spec, 4) != synth_generate(spec, 5)


@pytest.mark.parametrize("kwargs", [dict(n=0, d=2), dict(n=5, d=0), dict(n=5, d=2, c=1),
                                    dict(n=5, d=2, noise_rate=1.0), dict(n=5, d=2, noise_rate=-0.1)])
def test_synth_invalid(kwargs):
    with pytest.raises(ValidationError):
        SynthSpec(**kwargs)


def test_synth_separable_single_tree():
    b = synth_generate(SynthSpec(100, 2, 2, class_separation=10.0, noise_rate=0.0), 0)
    tree = train_tree(b.X, b.y, TreeParams(2, 10, 0))
    assert np.mean(tree.predict(b.X) == b.y) == 1.0


def test_synth_class_means_separated():
    sep = 6.0
    b = synth_generate(SynthSpec(4000, 4, 2, class_separation=sep, noise_rate=0.0), 1)
    gap = np.abs(b.X[b.y == 1].mean(axis=0) - b.X[b.y == 0].mean(axis=0))
    assert np.all(gap >= sep / 2)


def test_synth_full_noise_is_chance():
    from comet.ivoting import IVoteParams, bag
    full = synth_generate(SynthSpec(4000, 4, 2, class_separation=3.0, noise_rate=0.5), 2)
    train, test = full.split(2000)
    ens = bag(train, IVoteParams(50, 400, seed=1))
    acc = np.mean(ens.predict(test.X) == test.y)
    assert 0.45 <= acc <= 0.55


def test_concat_and_take(small_block):
    a, b = small_block.split(100)
    assert concat_blocks([a, b]) == small_block
    assert len(small_block.take([0, 0, 1])) == 3
