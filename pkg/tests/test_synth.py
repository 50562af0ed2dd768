import numpy as np
import pytest

from egopose.errors import ConfigError
from egopose.featurize import BBOX, LABEL, LEFT, RIGHT, build_sequence_tensor, hflip, sample_indices
from egopose.ingest import load_dataset, read_sequence_2d
from egopose.synth import (SynthConfig, bayes_separability_check, class_velocity, generate, generate_records,
                           make_sequence, mean_displacement, templates)

SMALL = dict(num_classes=4, per_class_train=3, per_class_val=2, per_class_test=2, frames_min=10, frames_max=20)


def features(rec):
    return build_sequence_tensor(rec, sample_indices(len(rec), 40, "equal")).rows


@pytest.mark.parametrize("source,static", [("hands_only", (BBOX, LABEL)), ("object_only", (LEFT, RIGHT))])
def test_static_parts_identical_across_classes(source, static):
    cfg = SynthConfig(signal_source=source, noise_sigma=0.0, **SMALL)
    rows = [features(make_sequence(cfg, k, "train", 1)) for k in range(cfg.num_classes)]
    for block in static:
        for other in rows[1:]:
            assert np.array_equal(rows[0][:, block], other[:, block])
    moving = (LEFT, RIGHT) if source == "hands_only" else (BBOX,)
    assert not np.array_equal(rows[0][:, moving[0]], rows[1][:, moving[0]])


def test_object_only_static_even_with_noise():
    # hand noise draws from a class-independent stream
    cfg = SynthConfig(signal_source="object_only", **SMALL)
    a, b = (features(make_sequence(cfg, k, "val", 0)) for k in (0, 3))
    assert np.array_equal(a[:, LEFT], b[:, LEFT]) and np.array_equal(a[:, RIGHT], b[:, RIGHT])


def test_generation_is_byte_identical(tmp_path):
    cfg = SynthConfig(seed=3, **SMALL)
    generate(cfg, tmp_path / "a")
    generate(cfg, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 4 * 7 + 1
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_seed_changes_data():
    a = generate_records(SynthConfig(seed=1, **SMALL)).split("train")[0]
    b = generate_records(SynthConfig(seed=2, **SMALL)).split("train")[0]
    assert a != b


def test_manifest_and_round_trip(tmp_path):
    cfg = SynthConfig(**SMALL)
    manifest = generate(cfg, tmp_path)
    loaded = load_dataset(manifest)
    direct = generate_records(cfg)
    for split, n in (("train", 12), ("val", 8), ("test", 8)):
        assert len(loaded.split(split)) == n
        assert [r.frames for r in loaded.split(split)] == [r.frames for r in direct.split(split)]
        assert sorted(r.action_id for r in loaded.split(split)) == sorted(k for k in range(4) for _ in range(n // 4))
    rec = direct.split("test")[0]
    assert read_sequence_2d(tmp_path / rec.source_id).frames == rec.frames


def test_sequence_lengths_and_bounds():
    cfg = SynthConfig(**SMALL)
    for rec in generate_records(cfg).split("train"):
        assert 10 <= len(rec) <= 20
        for f in rec.frames:
            for hand in (f.left, f.right):
                assert hand.valid
                assert np.all(hand.joints >= 0) and np.all(hand.joints <= [1280, 720])


def test_hflip_preserves_class_template():
    cfg = SynthConfig(noise_sigma=0.0, **SMALL)
    tmpl = templates(cfg)
    for k in range(cfg.num_classes):
        rec = make_sequence(cfg, k, "test", 0)
        d = mean_displacement(hflip(rec))
        assert np.allclose(d[:4], tmpl[k][:4], atol=1e-9)


def test_class_velocity_speeds():
    cfg = SynthConfig()
    speeds = [np.linalg.norm(class_velocity(cfg, k)) for k in range(6)]
    assert speeds[0] == pytest.approx(1.5) and speeds[-1] == pytest.approx(2.5)


def test_bayes_oracle_noise_free_is_perfect():
    assert bayes_separability_check(SynthConfig(noise_sigma=0.0, **SMALL))["accuracy"] == 1.0


def test_bayes_oracle_default_is_separable():
    assert bayes_separability_check(SynthConfig(seed=1))["accuracy"] >= 0.99


def test_bayes_oracle_drowned_in_noise_near_chance():
    cfg = SynthConfig(noise_sigma=2000.0, num_classes=6, per_class_train=0, per_class_val=60, per_class_test=60)
    result = bayes_separability_check(cfg)
    assert abs(result["accuracy"] - result["chance"]) <= 0.1


@pytest.mark.parametrize("kwargs", [dict(signal_source="elbows"), dict(noise_sigma=-1.0),
                                    dict(frames_min=5, frames_max=2), dict(num_classes=0)])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        SynthConfig(**kwargs)
