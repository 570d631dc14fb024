from dataclasses import replace

import numpy as np
import pytest

from irnet import gradcore as G
from irnet.datagen import Normalizer, SynthSpec, make_dataset, synth_network
from irnet.errors import BadConfig, CorruptChecksum, ShapeMismatch, VersionMismatch
from irnet.gradcore import Tensor
from irnet.model import (
    ModelConfig,
    baseline_lstm_forward,
    forward,
    forward_direction,
    forward_target,
    init,
    load_checkpoint,
    make_batch,
    save_checkpoint,
    shape_signature,
)
from irnet.reconstruct import build_plan

from conftest import TINY, random_sample


def zeroed(params):
    for t in params.values():
        t.data[...] = 0.0
    return params


def test_config_validation():
    with pytest.raises(BadConfig):
        ModelConfig(k=0)
    with pytest.raises(BadConfig):
        ModelConfig(s_hidden=128)
    assert ModelConfig.from_dict(ModelConfig(w=2).to_dict()) == ModelConfig(w=2)


def test_init_deterministic(tiny_config):
    a, b = init(tiny_config, seed=3), init(tiny_config, seed=3)
    assert list(a) == list(b)
    assert all(np.array_equal(a[n].data, b[n].data) for n in a)
    c = init(tiny_config, seed=4)
    assert shape_signature(a) == shape_signature(c)
    assert not np.array_equal(a["head.W"].data, c["head.W"].data)


def test_init_scale_and_biases(tiny_config):
    params = init(tiny_config)
    W = params["target.fc.W"].data
    assert np.abs(W).max() <= 1 / np.sqrt(W.shape[1])
    assert all((t.data == 0).all() for n, t in params.items() if n.rsplit(".", 1)[-1].startswith("b"))


def test_default_head_width():
    # shapes only: the default widths are too large to initialise cheaply in a unit test
    c = ModelConfig()
    assert (2 * c.w + 1) * c.d_hid == 1792
    small = replace(c, t_hidden=8, target_hidden=8, conv_channels=2)
    params = init(small)
    assert params["head.W"].shape == (5, 1792)
    assert params["attn.W_q"].shape == (256, 256)


def test_conv_shared_and_banks_disjoint(tiny_config):
    params = init(tiny_config)
    assert not any(".conv" in n and "tlstm" in n for n in params)
    ups = {n[3:] for n in params if n.startswith("up.")}
    downs = {n[5:] for n in params if n.startswith("down.")}
    assert ups == downs
    assert not np.array_equal(params["up.conv.W"].data, params["down.conv.W"].data)


def test_target_zero_params(tiny_config):
    params = zeroed(init(tiny_config))
    trf = forward_target(np.random.default_rng(0).uniform(size=(2, tiny_config.h)), params, tiny_config)
    assert trf.shape == (2, tiny_config.d_hid) and (trf.data == 0).all()


def test_direction_zero_inputs(tiny_config):
    c = tiny_config
    params = zeroed(init(c))
    mats = [np.zeros((1, c.k**d, c.h)) for d in range(1, c.w + 1)]
    sf = forward_direction(mats, params, c, "up")
    assert len(sf) == c.w and all(s.shape == (1, c.d_hid) and (s.data == 0).all() for s in sf)


def test_direction_w1():
    c = ModelConfig(**{**TINY, "w": 1})
    params = init(c)
    (sf,) = forward_direction([np.ones((1, c.k, c.h))], params, c, "down")
    assert sf.shape == (1, c.d_hid)


def test_forward_shapes_and_swap(tiny_config):
    c = tiny_config
    rng = np.random.default_rng(1)
    params = init(c, seed=1)
    samples = [random_sample(c, rng) for _ in range(3)]
    batch = make_batch(samples)
    out = forward(batch, params, c)
    assert out.shape == (3, c.P)
    swapped = make_batch(samples)
    swapped.um, swapped.dm = batch.dm, batch.um
    assert not np.allclose(forward(swapped, params, c).data, out.data)
    again = forward(make_batch(samples), params, c)
    assert again.data.tobytes() == out.data.tobytes()


def test_forward_rejects_wrong_shapes(tiny_config):
    c = tiny_config
    sample = random_sample(c, np.random.default_rng(2))
    sample.um[1] = np.zeros((3, c.h))
    with pytest.raises(ShapeMismatch):
        forward(make_batch([sample]), init(c), c)


def test_full_model_grad_check(tiny_config):
    c = tiny_config
    rng = np.random.default_rng(3)
    params = init(c, seed=3)
    batch = make_batch([random_sample(c, rng) for _ in range(2)])
    probe = Tensor(rng.normal(size=(2, c.P)))
    # every small tensor, which covers each parameter group; the acceptance
    # suite checks all entries
    subset = [t for t in params.values() if t.data.size <= 64]
    assert {n.split(".")[0] for n, t in params.items() if t.data.size <= 64} == {"target", "up", "down", "attn", "head"}
    err = G.grad_check(lambda: G.sum(G.mul(forward(batch, params, c), probe)), subset)
    assert err < 1e-4


def test_target_grad_check(tiny_config):
    c = tiny_config
    rng = np.random.default_rng(4)
    params = init(c, seed=4)
    names = [n for n in params if n.startswith("target.")]
    x = rng.uniform(size=(2, c.h))
    probe = Tensor(rng.normal(size=(2, c.d_hid)))
    err = G.grad_check(lambda: G.sum(G.mul(forward_target(x, params, c), probe)), [params[n] for n in names])
    assert err < 1e-4


def test_baseline(tiny_config):
    c = replace(tiny_config, kind="baseline")
    params = init(c, seed=5)
    assert {n.split(".")[0] for n in params} == {"baseline", "head"}
    rng = np.random.default_rng(5)
    x = rng.uniform(size=(2, c.h))
    assert baseline_lstm_forward(x, params, c).shape == (2, c.P)
    batch = make_batch([random_sample(c, rng) for _ in range(2)])
    assert forward(batch, params, c).shape == (2, c.P)
    probe = Tensor(rng.normal(size=(2, c.P)))
    assert G.grad_check(lambda: G.sum(G.mul(baseline_lstm_forward(x, params, c), probe)), list(params.values())) < 1e-4
    assert (baseline_lstm_forward(x, zeroed(params), c).data == 0).all()


def test_checkpoint_roundtrip(tmp_path, tiny_config):
    params = init(tiny_config, seed=6)
    norm = Normalizer({3: (40.0, 60.5), 7: (10.0, 20.0)}, (10.0, 60.5))
    meta = {"target": 3, "note": "x"}
    save_checkpoint(tmp_path / "a.irn", params, tiny_config, norm, meta)
    ck = load_checkpoint(tmp_path / "a.irn")
    assert ck.config == tiny_config and ck.meta == meta
    assert ck.normalizer == norm
    assert list(ck.params) == list(params)
    assert all(ck.params[n].data.tobytes() == params[n].data.tobytes() for n in params)
    save_checkpoint(tmp_path / "b.irn", ck.params, ck.config, ck.normalizer, ck.meta)
    assert (tmp_path / "a.irn").read_bytes() == (tmp_path / "b.irn").read_bytes()


def test_checkpoint_corruption(tmp_path, tiny_config):
    path = tmp_path / "a.irn"
    save_checkpoint(path, init(tiny_config), tiny_config, Normalizer({0: (1.0, 2.0)}, (1.0, 2.0)))
    blob = bytearray(path.read_bytes())

    bad = bytearray(blob)
    bad[0] ^= 0xFF
    path.write_bytes(bytes(bad))
    with pytest.raises(CorruptChecksum):
        load_checkpoint(path)

    bad = bytearray(blob)
    bad[4] += 1
    path.write_bytes(bytes(bad))
    with pytest.raises(VersionMismatch):
        load_checkpoint(path)

    bad = bytearray(blob)
    bad[-20] ^= 0x01
    path.write_bytes(bytes(bad))
    with pytest.raises(CorruptChecksum):
        load_checkpoint(path)


def test_shapes_independent_of_network(tiny_config):
    c = tiny_config
    params = init(c)
    signature = shape_signature(params)
    for seed, target in ((0, 9), (1, 2), (2, 11)):
        net, store = synth_network(SynthSpec(n_roads=12, steps=30, seed=seed))
        plan = build_plan(net, target, store.features(), c.k, c.w)
        samples = make_dataset(plan, store, c.h, c.P)[:2]
        assert forward(make_batch(samples), params, c).shape == (2, c.P)
    assert shape_signature(params) == signature
