"""Model architecture: parameter store, building blocks, forward contracts."""

import math

import numpy as np
import pytest

from machineseq import model as M
from machineseq import tensor as T
from machineseq.errors import ConfigError, ContractError
from machineseq.model import Model, ModelConfig

from conftest import random_sequence


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(d_latent=10, n_heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(encoder="cnn")
    with pytest.raises(ConfigError):
        ModelConfig(decoder_mode="sideways")
    with pytest.raises(ConfigError):
        ModelConfig(dropout=1.0)
    assert ModelConfig(d_latent=64, n_heads=4).d_head == 16


def test_parameter_names_unique_and_shaped(tiny_cfg):
    shapes = M._parameter_shapes(tiny_cfg)
    names = [n for n, _s, _k in shapes]
    assert len(names) == len(set(names))
    model = Model(tiny_cfg, seed=0)
    for name, shape, _kind in shapes:
        assert model.params[name].shape == shape
        assert model.params[name].requires_grad


def test_init_deterministic(tiny_cfg):
    a = Model(tiny_cfg, seed=5)
    b = Model(tiny_cfg, seed=5)
    c = Model(tiny_cfg, seed=6)
    for name in a.params:
        assert np.array_equal(a.params[name].data, b.params[name].data)
    assert any(not np.array_equal(a.params[n].data, c.params[n].data)
               for n in a.params)


def test_nn_encoder_parameters(tiny_cfg):
    cfg = ModelConfig(**{**vars(tiny_cfg), "encoder": "nn"})
    names = {n for n, _s, _k in M._parameter_shapes(cfg)}
    assert "nn.proc.W1" in names
    assert not any(n.startswith("gat.") for n in names)


def test_checkpoint_roundtrip_bit_exact(tiny_cfg):
    model = Model(tiny_cfg, seed=1)
    blob = M.save_checkpoint(model)
    again = M.save_checkpoint(M.load_checkpoint(blob))
    assert blob == again
    back = M.load_checkpoint(blob)
    assert back.config == tiny_cfg
    for name in model.params:
        assert np.array_equal(back.params[name].data, model.params[name].data)


def test_checkpoint_bad_magic():
    with pytest.raises(ConfigError):
        M.load_checkpoint(b"not a checkpoint")


def test_layer_norm_oracle():
    x = T.constant([[1.0, 2.0, 3.0, 4.0]])
    out = M.layer_norm(x).data
    c = np.array([-1.5, -0.5, 0.5, 1.5])
    expected = c / np.sqrt(c.var() + 1e-5)
    assert np.allclose(out, expected, atol=1e-12)
    assert abs(out.mean()) < 1e-12


def test_causal_mask_oracle():
    mask = M.causal_mask(3)
    assert np.array_equal(mask, [[False, True, True],
                                 [False, False, True],
                                 [False, False, False]])


def test_positional_encoding_oracle():
    pe = M.positional_encoding(3, 4)
    assert np.array_equal(pe[0], [0.0, 1.0, 0.0, 1.0])
    assert pe[1, 0] == pytest.approx(math.sin(1.0), abs=1e-15)
    assert pe[1, 1] == pytest.approx(math.cos(1.0), abs=1e-15)
    assert pe[2, 2] == pytest.approx(math.sin(2.0 / 100.0), abs=1e-15)


def test_time_encode_contract(tiny_cfg):
    model = Model(tiny_cfg, seed=0)
    row = M.time_encode(model.params, 3, tiny_cfg)
    assert np.array_equal(row.data[0], model.params["time.Wt"].data[2])
    with pytest.raises(ContractError):
        M.time_encode(model.params, 0, tiny_cfg)
    with pytest.raises(ContractError):
        M.time_encode(model.params, tiny_cfg.T_max + 1, tiny_cfg)


def test_dropout_off_and_deterministic(tiny_cfg):
    x = T.constant(np.ones((4, 4)))
    assert M.dropout(x, 0.0, np.random.default_rng(0)) is x
    a = M.dropout(x, 0.5, np.random.default_rng(7)).data
    b = M.dropout(x, 0.5, np.random.default_rng(7)).data
    assert np.array_equal(a, b)
    kept = a[a != 0.0]
    assert np.allclose(kept, 2.0)  # inverted scaling by 1/(1-p)


def test_attention_rows_sum_to_one(tiny_cfg):
    design, process, labels = random_sequence(0, 3)
    model = Model(tiny_cfg, seed=0)
    trace = {}
    M.forward(model, design, process, labels, mode=M.TEACHER_FORCED,
              trace=trace)
    expected_sites = {"gat.proc", "gat.design", "fuse", "pool",
                      "dec.label", "dec.graph", "dec.cross"}
    assert expected_sites <= set(trace)
    for site, mats in trace.items():
        for mat in mats:
            sums = mat.sum(axis=-1)
            assert np.all(np.abs(sums - 1.0) < 1e-10), site


def test_causal_attention_positions_exactly_zero(tiny_cfg):
    design, process, labels = random_sequence(1, 4)
    model = Model(tiny_cfg, seed=0)
    trace = {}
    M.forward(model, design, process, labels, mode=M.TEACHER_FORCED,
              trace=trace)
    mask = M.causal_mask(4)
    for site in ("dec.label", "dec.graph", "dec.cross"):
        for mat in trace[site]:
            assert np.all(mat[mask] == 0.0), site


def test_forward_shapes(tiny_cfg):
    design, process, labels = random_sequence(2, 3)
    model = Model(tiny_cfg, seed=0)
    res = M.forward(model, design, process, labels)
    assert len(res.main_logits) == 3
    assert res.main_logits[0].shape == (1, 3)
    assert res.sub_logits[0].shape == (1, 12)
    assert res.embeddings[0].shape == (1, tiny_cfg.d_latent)
    assert all(0 <= p < 3 for p in res.pred_main)
    assert all(0 <= p < 12 for p in res.pred_sub)


def test_teacher_forced_matches_stepwise_decoder(tiny_cfg):
    # the single masked full-length pass must agree with truncated
    # per-step decoding up to BLAS rounding
    design, process, labels = random_sequence(3, 4)
    model = Model(tiny_cfg, seed=0)
    res = M.forward(model, design, process, labels, mode=M.TEACHER_FORCED)
    s_hat = M.encode_sequence(model, design, process)
    for t in range(1, 5):
        l_y = M.embed_labels(model.params, labels[: t - 1])
        x = M.decoder_step(model, l_y, T.slice_rows(s_hat, 0, t))
        step_logits, _ = M.classify(model.params, T.slice_rows(x, t - 1, t))
        assert np.allclose(step_logits.data, res.main_logits[t - 1].data,
                           atol=1e-9)


def test_label_graph_length_contract(tiny_cfg):
    design, process, labels = random_sequence(4, 3)
    model = Model(tiny_cfg, seed=0)
    s_hat = M.encode_sequence(model, design, process)
    with pytest.raises(ContractError):
        M.decoder_step(model, M.embed_labels(model.params, labels), s_hat)


def test_label_count_contract(tiny_cfg):
    design, process, labels = random_sequence(5, 3)
    model = Model(tiny_cfg, seed=0)
    with pytest.raises(ContractError):
        M.forward(model, design, process, labels[:-1], mode=M.TEACHER_FORCED)


def test_embed_labels_rows(tiny_cfg):
    model = Model(tiny_cfg, seed=0)
    from machineseq.synth import OperationLabel
    labs = [OperationLabel.for_sub("Drilling")]
    out = M.embed_labels(model.params, labs)
    assert out.shape == (2, tiny_cfg.d_latent)
    assert np.array_equal(out.data[0], model.params["labels.bos"].data[0])
    expect = (model.params["labels.main"].data[1]
              + model.params["labels.sub"].data[6])
    assert np.allclose(out.data[1], expect, atol=1e-15)


def test_gat_single_node_no_edges(tiny_cfg):
    x = np.random.default_rng(0).normal(size=(1, 16))
    model = Model(tiny_cfg, seed=0)
    out = M.gat_layer(model.params, "proc", x, np.zeros((0, 2), dtype=np.int64),
                      np.zeros((0, 7)), tiny_cfg)
    assert out.shape == (1, tiny_cfg.d_latent)


def test_bidirectional_mode_sees_future(tiny_cfg):
    cfg = ModelConfig(**{**vars(tiny_cfg), "decoder_mode": "bidirectional"})
    design, process, labels = random_sequence(6, 3)
    model = Model(cfg, seed=0)
    base = M.forward(model, design, process, labels).main_logits[0].data.copy()
    perturbed = [g for g in process]
    import dataclasses
    perturbed[2] = dataclasses.replace(
        process[2], node_features=process[2].node_features + 1.0)
    changed = M.forward(model, design, perturbed, labels).main_logits[0].data
    assert not np.array_equal(base, changed)


def test_autoregressive_runs(tiny_cfg):
    design, process, labels = random_sequence(7, 3)
    model = Model(tiny_cfg, seed=0)
    res = M.forward(model, design, process, labels, mode=M.AUTOREGRESSIVE)
    assert len(res.pred_main) == 3
