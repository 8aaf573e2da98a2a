"""Shared fixtures: reference meshes, part specs, and synthetic graphs."""

import numpy as np
import pytest

from machineseq import graphs, synth
from machineseq.model import ModelConfig
from machineseq.synth import FeatureSpec, PartSpec


@pytest.fixture(scope="session")
def box_mesh():
    """Plain 10 mm cube built through the part-mesh constructor."""
    return synth.build_part_mesh((10.0, 10.0, 10.0), [])


@pytest.fixture(scope="session")
def simple_spec():
    """Stock with one rectangular pocket and one through hole."""
    return PartSpec(
        family="simple",
        stock_dims=(100.0, 60.0, 20.0),
        features=(
            FeatureSpec("rect_pocket", (30.0, 21.0), (20.0, 10.0), 5.0),
            FeatureSpec("circ_hole", (74.0, 22.8), (5.0,), 20.0),
        ),
    )


@pytest.fixture(scope="session")
def simple_sample(simple_spec):
    return synth.build_sample(simple_spec, "sample-0")


@pytest.fixture(scope="session")
def tiny_cfg():
    """Smallest sensible model for fast numeric tests (dropout off)."""
    return ModelConfig(d_latent=8, n_heads=2, n_decoder_layers=1,
                       ffn_width=8, dropout=0.0)


def random_design(rng, n=5):
    edges = [(i, (i + 1) % n) for i in range(n)]
    idx = np.array([(a, b) for a, b in edges] + [(b, a) for a, b in edges],
                   dtype=np.int64)
    return graphs.DesignGraph(rng.normal(size=(n, 9)), idx,
                              rng.normal(size=(len(idx), 4)))


def random_process(rng, t, n=6):
    edges = [(i, (i + 1) % n) for i in range(n)] + \
            [(i, (i + 2) % n) for i in range(n)]
    idx = np.array([(a, b) for a, b in edges] + [(b, a) for a, b in edges],
                   dtype=np.int64)
    return graphs.ProcessGraph(rng.normal(size=(n, 16)), idx,
                               rng.normal(size=(len(idx), 7)), t)


def random_sequence(seed, T, n_proc=6, n_design=5):
    """(design, process list, labels) with random features and labels."""
    rng = np.random.default_rng(seed)
    design = random_design(rng, n_design)
    process = [random_process(rng, t + 1, n_proc) for t in range(T)]
    labels = [synth.OperationLabel.for_sub(
        synth.SUB_OPS[rng.integers(len(synth.SUB_OPS))]) for _ in range(T)]
    return design, process, labels
