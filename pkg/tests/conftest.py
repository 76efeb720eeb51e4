import numpy as np
import pytest

from comet.data import Block, SynthSpec, synth_generate
from comet.tree import Ensemble, leaf_tree


def stub_ensemble(votes, num_features=1, num_classes=2):
    """Ensemble of constant single-leaf trees; ``votes[i]`` is tree i's class."""
    trees = []
    for v in votes:
        counts = [0] * num_classes
        counts[v] = 1
        trees.append(leaf_tree(counts, num_features))
    return Ensemble(trees, num_features, num_classes)


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def small_block():
    return synth_generate(SynthSpec(400, 5, 2, class_separation=1.0, noise_rate=0.05), seed=3)


@pytest.fixture
def separable_block():
    return synth_generate(SynthSpec(300, 2, 2, class_separation=10.0, noise_rate=0.0), seed=5)


@pytest.fixture
def train_test():
    full = synth_generate(SynthSpec(3000, 8, 2, class_separation=1.0, noise_rate=0.05), seed=11)
    return full.split(2000)


@pytest.fixture
def tiny_block():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    return Block(X, np.array([0, 0, 1, 1]), 2)
