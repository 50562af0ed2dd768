import math

import numpy as np
import pytest

from egopose import autodiff as ad
from egopose.autodiff import Tensor, gradcheck
from egopose.errors import ConfigError, ShapeError
from egopose.transformer import (Model, ModelConfig, attention, forward, init_model, param_shapes, predict,
                                 softmax)

SMALL = ModelConfig(d_model=16, n_heads=4, n_layers=2, d_mlp=32, dropout=0.0, seq_len=6, num_classes=5)


def small_model(seed=0, std=None, zero_pos=False) -> Model:
    model = init_model(SMALL, seed)
    if std is not None:
        rng = np.random.default_rng(seed + 1000)
        for t in model.params.values():
            t.data[...] = rng.normal(0.0, std, size=t.shape)
    if zero_pos:
        model["pos_embed"].data[...] = 0.0
    return model


def test_init_is_deterministic():
    assert init_model(ModelConfig(num_classes=6), 3).equals(init_model(ModelConfig(num_classes=6), 3))
    assert not init_model(SMALL, 1).equals(init_model(SMALL, 2))


def test_indivisible_heads_rejected():
    with pytest.raises(ConfigError):
        ModelConfig(d_model=6, n_heads=4)


def test_parameter_count_closed_form():
    for cfg in (ModelConfig(num_classes=6), ModelConfig(), SMALL):
        d, m, L, C = cfg.d_model, cfg.d_mlp, cfg.n_layers, cfg.num_classes
        per_block = 4 * d + 4 * d * d + 2 * d * m + m + d
        expected = 93 * d + d + d + (cfg.seq_len + 1) * d + L * per_block + 2 * d + d * C + C
        assert init_model(cfg).num_parameters() == expected
    assert init_model(ModelConfig(num_classes=6)).num_parameters() == 809478


def test_parameter_names_ordered():
    names = list(param_shapes(SMALL))
    assert names[:4] == ["token_proj.w", "token_proj.b", "cls_token", "pos_embed"]
    assert names[-2:] == ["head.w", "head.b"]


def test_single_token_attention_is_value_then_output_projection(rng):
    model = small_model(std=0.3)
    x = rng.normal(size=(1, 1, 16))
    out = attention(Tensor(x), model, 0).data
    expected = x @ model["blocks.0.attn.wv"].data @ model["blocks.0.attn.wo"].data
    assert np.allclose(out, expected, rtol=0, atol=1e-12)


def test_identical_tokens_attend_uniformly(rng):
    model = small_model(std=0.3)
    x = np.repeat(rng.normal(size=(1, 1, 16)), 7, axis=1)
    _, weights = attention(Tensor(x), model, 1, return_weights=True)
    assert weights.shape == (1, 4, 7, 7)
    assert np.allclose(weights, 1 / 7, rtol=0, atol=1e-12)


def test_attention_matches_per_head_loop(rng):
    model = small_model(std=0.3)
    x = rng.normal(size=(2, 5, 16))
    out = attention(Tensor(x), model, 1).data
    wq, wk, wv, wo = (model[f"blocks.1.attn.{w}"].data for w in ("wq", "wk", "wv", "wo"))
    dh = 4
    for b in range(2):
        heads = []
        for h in range(4):
            cols = slice(h * dh, (h + 1) * dh)
            q, k, v = x[b] @ wq[:, cols], x[b] @ wk[:, cols], x[b] @ wv[:, cols]
            ctx = np.zeros((5, dh))
            for i in range(5):
                s = np.array([q[i] @ k[j] for j in range(5)]) / math.sqrt(dh)
                w = np.exp(s - s.max())
                w /= w.sum()
                ctx[i] = sum(w[j] * v[j] for j in range(5))
            heads.append(ctx)
        assert np.allclose(out[b], np.concatenate(heads, axis=1) @ wo, rtol=0, atol=1e-12)


def test_forward_shapes(rng):
    model = small_model()
    V = rng.uniform(size=(6, 93))
    assert forward(model, V).shape == (5,)
    assert forward(model, np.stack([V, V, V])).shape == (3, 5)
    with pytest.raises(ShapeError):
        forward(model, rng.uniform(size=(7, 93)))


def test_batched_forward_matches_single(rng):
    model = small_model(std=0.2)
    X = rng.uniform(size=(3, 6, 93))
    batched = forward(model, X).data
    for i in range(3):
        assert np.allclose(batched[i], forward(model, X[i]).data, rtol=0, atol=1e-12)


def test_inference_is_deterministic_and_pure(rng):
    model = small_model()
    before = model.state()
    V = rng.uniform(size=(6, 93))
    a = forward(model, V).data
    b = forward(model, V).data
    assert np.array_equal(a, b)
    assert all(np.array_equal(before[k], t.data) for k, t in model.params.items())


def test_permutation_invariant_without_positions(rng):
    model = small_model(std=0.2, zero_pos=True)
    V = rng.uniform(size=(6, 93))
    perm = rng.permutation(6)
    assert np.max(np.abs(forward(model, V).data - forward(model, V[perm]).data)) <= 1e-9


def test_positions_break_permutation_invariance(rng):
    model = small_model(std=0.2)
    V = rng.uniform(size=(6, 93))
    assert np.max(np.abs(forward(model, V).data - forward(model, V[::-1]).data)) > 1e-6


def test_predict_probabilities(rng):
    model = small_model(std=0.2)
    V = rng.uniform(size=(6, 93))
    k, probs = predict(model, V)
    assert abs(probs.sum() - 1) <= 1e-12
    assert k == int(np.argmax(forward(model, V).data))


def test_softmax_shift_invariant(rng):
    z = rng.normal(size=9)
    assert np.allclose(softmax(z), softmax(z + 123.0), rtol=0, atol=1e-12)


def test_predict_ties_pick_lowest_index():
    model = small_model()
    model["head.w"].data[...] = 0.0
    model["head.b"].data[...] = 0.0
    assert predict(model, np.zeros((6, 93)))[0] == 0


def test_training_forward_needs_rng_with_dropout(rng):
    model = init_model(ModelConfig(d_model=8, n_heads=2, n_layers=1, d_mlp=8, seq_len=3, num_classes=2))
    with pytest.raises(ValueError):
        forward(model, rng.uniform(size=(3, 93)), train=True)


def test_dropout_changes_training_forward(rng):
    model = init_model(ModelConfig(d_model=8, n_heads=2, n_layers=1, d_mlp=8, seq_len=3, num_classes=2,
                                   dropout=0.5), 0)
    V = rng.uniform(size=(3, 93))
    a = forward(model, V, train=True, rng=np.random.default_rng(1)).data
    b = forward(model, V, train=True, rng=np.random.default_rng(2)).data
    assert not np.array_equal(a, b)


def test_tiny_model_gradcheck(rng):
    cfg = ModelConfig(d_model=8, n_heads=2, n_layers=1, d_mlp=16, dropout=0.0, seq_len=5, num_classes=3)
    model = init_model(cfg, 0)
    prng = np.random.default_rng(7)
    for t in model.params.values():
        t.data[...] = prng.normal(0.0, 0.5, size=t.shape)
    V = rng.uniform(size=(5, 93))
    err = gradcheck(lambda *_: ad.cross_entropy(forward(model, V), 1), list(model.params.values()))
    assert err < 1e-4
