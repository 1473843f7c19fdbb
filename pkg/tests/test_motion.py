import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import small_corpus
from fewshot_haad.errors import ConfigError, ContractError, ManifestError
from fewshot_haad.motion import (
    SupportSet,
    check_motion,
    default_synthetic_spec,
    generate_synthetic_corpus,
    load_manifest,
    preprocess,
    read_motion_file,
    sample_support_set,
    scored_pool,
    write_dataset,
    write_motion_file,
)


def test_check_motion_rejects_bad_shapes():
    with pytest.raises(ContractError):
        check_motion(np.zeros((5, 4)))
    with pytest.raises(ContractError):
        check_motion(np.full((5, 6), np.nan))
    with pytest.raises(ContractError):
        check_motion(np.zeros((5, 6)), joints=3)
    assert check_motion(np.zeros((5, 6)), joints=2, frames=5).dtype == np.float64


def test_preprocess_crop_pad_and_center():
    x = np.arange(8 * 6, dtype=float).reshape(8, 6)
    out = preprocess(x, 5, center_root=False)
    np.testing.assert_array_equal(out, x[:5])

    short = preprocess(x[:3], 6, center_root=False)
    np.testing.assert_array_equal(short[:3], x[:3])
    np.testing.assert_array_equal(short[3:], np.repeat(x[2:3], 3, axis=0))

    centered = preprocess(x, 8)
    np.testing.assert_allclose(centered[0, :3], 0.0)
    np.testing.assert_allclose(centered, x - np.tile(x[0, :3], 2))


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 30), target=st.integers(1, 30), j=st.integers(1, 5))
def test_preprocess_shape_and_root(h, target, j):
    x = np.random.default_rng(h * 31 + target).standard_normal((h, 3 * j))
    out = preprocess(x, target)
    assert out.shape == (target, 3 * j)
    np.testing.assert_allclose(out[0, :3], 0.0, atol=1e-12)


def test_motion_file_round_trip(tmp_path):
    x = np.random.default_rng(0).standard_normal((7, 9))
    write_motion_file(tmp_path / "a.bin", x)
    back = read_motion_file(tmp_path / "a.bin", 3)
    np.testing.assert_allclose(back, x.astype(np.float32))
    with pytest.raises(ManifestError):
        read_motion_file(tmp_path / "a.bin", 4)
    with pytest.raises(FileNotFoundError):
        read_motion_file(tmp_path / "missing.bin", 3)


def test_write_dataset_splits(tiny_manifest):
    m = tiny_manifest
    assert m.categories == ("action0", "action1", "action2")
    assert m.unseen_categories == ["action2"]
    assert m.train_categories == ["action0", "action1"]
    for c in ("action0", "action1"):
        assert len(m.train_pool(c)) == 3 and len(m.test_pool(c)) == 3
    assert m.train_pool("action2") == [] and len(m.test_pool("action2")) == 6
    loaded = m.load(m.samples[0])
    assert loaded.motion.shape == (12, 12)
    assert not loaded.motion.flags.writeable
    assert m.load(m.samples[0]) is loaded


def _manifest_doc(tmp_path, samples, categories=("a", "b")):
    write_motion_file(tmp_path / "x.bin", np.zeros((4, 6)))
    doc = {"categories": list(categories), "frame_length": 4, "joints": 2, "samples": samples}
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    return path


def test_manifest_errors(tmp_path):
    ok = {"id": "s0", "category": "a", "split": "train", "file": "x.bin"}
    load_manifest(_manifest_doc(tmp_path, [ok]))

    with pytest.raises(ManifestError, match="unknown category"):
        load_manifest(_manifest_doc(tmp_path, [{**ok, "category": "zzz"}]))
    with pytest.raises(ManifestError, match="no samples"):
        load_manifest(_manifest_doc(tmp_path, []))
    with pytest.raises(ManifestError, match="duplicate"):
        load_manifest(_manifest_doc(tmp_path, [ok, ok]))
    with pytest.raises(ManifestError, match="split"):
        load_manifest(_manifest_doc(tmp_path, [{**ok, "split": "val"}]))
    with pytest.raises(ManifestError, match="mixes"):
        load_manifest(_manifest_doc(tmp_path, [ok, {**ok, "id": "s1", "split": "unseen-test"}]))
    with pytest.raises(FileNotFoundError, match="nope.bin"):
        load_manifest(_manifest_doc(tmp_path, [{**ok, "file": "nope.bin"}]))
    with pytest.raises(FileNotFoundError, match="missing.json"):
        load_manifest(tmp_path / "missing.json")

    bad = tmp_path / "bad.json"
    bad.write_text('{"categories": [,]}')
    with pytest.raises(ManifestError, match="line 1"):
        load_manifest(bad)


def test_synthetic_corpus_deterministic_and_validated():
    a = small_corpus(seed=3)
    b = small_corpus(seed=3)
    assert [m.sample_id for m in a] == [m.sample_id for m in b]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.motion, y.motion)
    assert len(a) == 18 and a[0].motion.shape == (12, 12)
    with pytest.raises(ConfigError):
        default_synthetic_spec(1)
    spec = default_synthetic_spec(2, 2, 4, 12)
    spec["categories"] = spec["categories"][:1]
    with pytest.raises(ConfigError):
        generate_synthetic_corpus(spec, 0)


def test_synthetic_jitter_knobs_change_samples():
    base = default_synthetic_spec(2, 3, 4, 20, seed=1, amplitude_jitter=0.0, phase_jitter=0.0, noise=0.0)
    still = generate_synthetic_corpus(base, 0)
    # no jitter and no noise: every sample of a category is the same motion
    np.testing.assert_allclose(still[0].motion, still[1].motion)
    for key in ("speed_jitter", "joint_jitter", "drift"):
        spec = json.loads(json.dumps(base))
        for c in spec["categories"]:
            c[key] = 0.3
        moved = generate_synthetic_corpus(spec, 0)
        assert not np.allclose(moved[0].motion, moved[1].motion)
        if key == "drift":
            # drift leaves the first half of every clip untouched
            np.testing.assert_allclose(moved[0].motion[:10], still[0].motion[:10])


def test_support_sampling(tiny_manifest):
    s = sample_support_set(tiny_manifest, "action2", 4, seed=5)
    assert len(s) == 4 and len(set(s.member_ids)) == 4
    assert all(i.startswith("action2") for i in s.member_ids)
    again = sample_support_set(tiny_manifest, "action2", 4, seed=5)
    assert again.member_ids == s.member_ids
    pool = scored_pool(tiny_manifest, s)
    assert not set(s.member_ids) & {e.sample_id for e in pool}
    assert len(pool) == 3 + 3 + 6 - 4
    with pytest.raises(ContractError, match="action0"):
        sample_support_set(tiny_manifest, "action0", 4, seed=0)


def test_support_set_validation():
    with pytest.raises(ContractError):
        SupportSet((), "c")
    with pytest.raises(ContractError):
        SupportSet((np.zeros((4, 3)), np.zeros((5, 3))), "c")


def test_write_dataset_unknown_unseen(tmp_path):
    with pytest.raises(ConfigError):
        write_dataset(small_corpus(), tmp_path, unseen=["nope"])
