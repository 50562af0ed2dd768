"""Numeric self-checks shared by the ``gradcheck`` and ``selftest`` subcommands.

Checks look functions up through their modules at call time, so a patched or
broken implementation is what gets tested.
"""

from __future__ import annotations

import tempfile
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import checkpoint, featurize, ingest, pose_core, train_eval, transformer
from .autodiff import Tensor

TINY_GRADCHECK = transformer.ModelConfig(d_model=8, n_heads=2, n_layers=1, d_mlp=16, dropout=0.0, seq_len=5,
                                         num_classes=3)
GRADCHECK_TOL = 1e-4
PRIMITIVE_TOL = 1e-6


def _weighted(t: Tensor, rng: np.random.Generator) -> Tensor:
    return ad.sum_all(ad.mul(t, Tensor(rng.normal(size=t.shape))))


def primitive_gradchecks(seed: int = 0) -> dict[str, float]:
    """Max relative finite-difference error for each differentiable primitive."""
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(2, 3, 4)))
    w = Tensor(rng.normal(size=(4, 5)))
    g, b = Tensor(rng.normal(size=4)), Tensor(rng.normal(size=4))
    r = Tensor(rng.choice([-1.0, 1.0], size=(3, 4)) * rng.uniform(0.1, 2.0, size=(3, 4)))
    table = Tensor(rng.normal(size=(6, 4)))
    tgt = rng.integers(0, 4, size=(2, 3))
    wr = np.random.default_rng(seed + 1)
    cases: dict[str, tuple[Callable, list[Tensor]]] = {
        "add": (lambda: _weighted(ad.add(a, b), wr), [a, b]),
        "mul": (lambda: _weighted(ad.mul(a, b), wr), [a, b]),
        "matmul": (lambda: _weighted(ad.matmul(a, w), wr), [a, w]),
        "layer_norm": (lambda: _weighted(ad.layer_norm(a, g, b), wr), [a, g, b]),
        "softmax": (lambda: _weighted(ad.softmax_lastdim(a), wr), [a]),
        "gelu": (lambda: _weighted(ad.gelu(a), wr), [a]),
        "relu": (lambda: _weighted(ad.relu(r), wr), [r]),
        "embedding_select": (lambda: _weighted(ad.embedding_select(table, [1, 1, 3]), wr), [table]),
        "concat_slice": (lambda: _weighted(ad.slice_rows(ad.concat_rows([a, a]), 2, 5), wr), [a]),
        "reshape_permute": (lambda: _weighted(ad.permute(ad.reshape(a, (6, 4)), (1, 0)), wr), [a]),
        "cross_entropy": (lambda: ad.cross_entropy(a, tgt), [a]),
    }
    results = {}
    for name, (f, xs) in cases.items():
        state = wr.bit_generator.state

        def fixed(*_, f=f, state=state):
            wr.bit_generator.state = state  # same weights on every evaluation
            return f()

        results[name] = ad.gradcheck(fixed, xs)
    return results


def tiny_model_gradcheck(seed: int = 0) -> float:
    """Full-model gradcheck of the tiny config at a random parameter point (std 0.5).

    At the N(0, 0.02) initialisation many gradients are ~1e-8 and central
    differences lose most of their digits to roundoff, so a generic point is used.
    """
    model = transformer.init_model(TINY_GRADCHECK, seed)
    rng = np.random.default_rng(seed + 1)
    for t in model.params.values():
        t.data[...] = rng.normal(0.0, 0.5, size=t.shape)
    V = rng.uniform(size=(TINY_GRADCHECK.seq_len, featurize.FEATURE_DIM))
    return ad.gradcheck(lambda *_: ad.cross_entropy(transformer.forward(model, V), 1), list(model.params.values()))


# ---------------------------------------------------------------- selftest


def _random_record(rng: np.random.Generator, T: int = 12, width: int = 640, height: int = 480):
    frames = []
    for _ in range(T):
        hands = [pose_core.HandPose2D.absent() if rng.random() < 0.2 else
                 pose_core.HandPose2D(rng.uniform(0, [width, height], size=(21, 2))) for _ in range(2)]
        x, y = np.sort(rng.uniform(0, width, 2)), np.sort(rng.uniform(0, height, 2))
        box = pose_core.ObjectPose2D.from_extent(x[0], y[0], x[1], y[1], int(rng.integers(0, 8)))
        frames.append(pose_core.FramePose(hands[0], hands[1], box, width, height))
    return ingest.SequenceRecord(frames, 0, "selftest")


def check_hflip_involution():
    rng = np.random.default_rng(1)
    for _ in range(20):
        rec = _random_record(rng)
        assert featurize.hflip(featurize.hflip(rec)) == rec, "hflip(hflip(x)) != x"
        assert featurize.hflip(rec) != rec, "hflip left the sequence unchanged"


def check_feature_shape():
    rec = _random_record(np.random.default_rng(2), T=7)
    t = featurize.build_sequence_tensor(rec, featurize.sample_indices(len(rec)))
    assert t.rows.shape == (40, 93), f"sequence tensor shape {t.rows.shape}"
    assert np.all((t.rows >= 0) & (t.rows <= 1)), "features outside [0, 1]"


def check_equal_sampling():
    for T in (20, 40, 80):
        got = featurize.sample_indices(T, 40, "equal").tolist()
        assert got == [(i * T) // 40 for i in range(40)], f"equal sampling for T={T}"


def check_softmax_rows():
    x = np.random.default_rng(3).normal(size=(50, 10)) * 100
    s = ad.softmax_lastdim(Tensor(x)).data.sum(axis=-1)
    assert np.max(np.abs(s - 1)) <= 1e-12, "softmax rows do not sum to 1"


def check_epe():
    gt = pose_core.HandPose2D(np.random.default_rng(4).uniform(0, 100, size=(21, 2)))
    assert train_eval.epe(gt, gt) == 0.0, "EPE of identical poses"
    shifted = pose_core.HandPose2D(gt.joints + [3.0, 4.0])
    assert abs(train_eval.epe(shifted, gt) - 5.0) <= 1e-6, "EPE of a 3-4-5 shift"


def check_checkpoint_round_trip():
    model = transformer.init_model(TINY_GRADCHECK, 5)
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "m.ckpt"
        checkpoint.save_checkpoint(model, path)
        assert checkpoint.load_checkpoint(path).equals(model), "checkpoint round trip changed weights"


def check_permutation_property():
    model = transformer.init_model(TINY_GRADCHECK, 6)
    rng = np.random.default_rng(6)
    for t in model.params.values():
        t.data[...] = rng.normal(0.0, 0.3, size=t.shape)
    V = rng.uniform(size=(5, 93))
    perm = [4, 2, 0, 3, 1]
    moved = np.max(np.abs(transformer.forward(model, V).data - transformer.forward(model, V[perm]).data))
    assert moved > 1e-6, "positional embeddings have no effect"
    model["pos_embed"].data[...] = 0.0
    moved = np.max(np.abs(transformer.forward(model, V).data - transformer.forward(model, V[perm]).data))
    assert moved <= 1e-9, "logits depend on token order without positional embeddings"


def check_primitive_gradients():
    worst = max(primitive_gradchecks().values())
    assert worst < PRIMITIVE_TOL, f"primitive gradcheck error {worst:.3e}"


def check_model_gradient():
    err = tiny_model_gradcheck()
    assert err < GRADCHECK_TOL, f"tiny-model gradcheck error {err:.3e}"


SELFTESTS: list[tuple[str, Callable[[], None]]] = [
    ("hflip involution", check_hflip_involution),
    ("feature shape", check_feature_shape),
    ("equal sampling", check_equal_sampling),
    ("softmax rows", check_softmax_rows),
    ("epe", check_epe),
    ("checkpoint round trip", check_checkpoint_round_trip),
    ("permutation property", check_permutation_property),
    ("primitive gradients", check_primitive_gradients),
    ("model gradient", check_model_gradient),
]


def run_selftest(emit: Callable[[str], None] = print) -> bool:
    ok = True
    for name, check in SELFTESTS:
        try:
            check()
        except Exception as e:  # any failure, including crashes, fails the suite
            ok = False
            emit(f"FAIL {name}: {e}")
        else:
            emit(f"PASS {name}")
    return ok
