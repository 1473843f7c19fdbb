import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fewshot_haad.augment import PerturbationAugmenter
from fewshot_haad.encoder import EncoderConfig, init_params
from fewshot_haad.errors import ConfigError, ContractError
from fewshot_haad.inference import (
    AnomalyScore,
    EvalConfig,
    anomaly_scores,
    auc,
    embed,
    evaluate,
    expand_grid,
    export_embeddings,
    read_embeddings,
    score,
    support_embeddings,
    sweep,
    write_report,
    write_sweep,
)
from fewshot_haad.motion import (
    SupportSet,
    default_synthetic_spec,
    generate_synthetic_corpus,
    sample_support_set,
    write_dataset,
)
from fewshot_haad.spectral import build_dct_basis

# integer scores keep the strictly increasing warp below exact in floating point
scores = st.lists(st.integers(-50, 50), min_size=1, max_size=12)


def _encoder(manifest, seed=0):
    cfg = EncoderConfig(joint_count=manifest.joints, dct_components=3, hidden_dim=8, blocks=2,
                        frame_length=manifest.frame_length)
    return init_params(cfg, seed), build_dct_basis(3, manifest.frame_length)


# ---------------------------------------------------------------- score


def test_score_of_sole_identical_member_is_zero(tiny_manifest):
    params, basis = _encoder(tiny_manifest)
    x = tiny_manifest.load(tiny_manifest.samples[0]).motion
    s = score(params, basis, SupportSet((x,), "action0"), None, 0, x, seed=0)
    assert s.value == 0.0 and s.support_category == "action0"


def test_mean_distance_two_vectors():
    z = np.array([[0.0, 0.0]])
    v = np.array([[1.0, 0.0], [0.0, 3.0]])
    assert anomaly_scores(z, v)[0] == pytest.approx(2.0, abs=1e-15)


def test_zero_sigma_augmentation_leaves_score_unchanged(tiny_manifest):
    params, basis = _encoder(tiny_manifest)
    support = sample_support_set(tiny_manifest, "action2", 3, seed=1)
    x = tiny_manifest.load(tiny_manifest.samples[0]).motion
    plain = score(params, basis, support, None, 0, x, seed=0)
    same = score(params, basis, support, PerturbationAugmenter(0.0, observed_len=6), 4, x, seed=0)
    assert same.value == pytest.approx(plain.value, rel=1e-12)


def test_support_embedding_count_and_order(tiny_manifest):
    params, basis = _encoder(tiny_manifest)
    support = sample_support_set(tiny_manifest, "action2", 2, seed=0)
    v = support_embeddings(params, basis, support, PerturbationAugmenter(0.1, observed_len=6), 3, seed=0)
    assert v.shape == (2 * (1 + 3), tiny_manifest.joints)
    np.testing.assert_allclose(v[0], embed(params, basis, support.members[0])[0])
    np.testing.assert_allclose(v[4], embed(params, basis, support.members[1])[0])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.integers(1, 8))
def test_score_permutation_and_duplicate_update(seed, a):
    r = np.random.default_rng(seed)
    z = r.standard_normal((1, 4))
    v = r.standard_normal((a, 4))
    base = anomaly_scores(z, v)[0]
    assert anomaly_scores(z, v[r.permutation(a)])[0] == pytest.approx(base, rel=1e-12)
    k = int(r.integers(a))
    dup = anomaly_scores(z, np.vstack([v, v[k]]))[0]
    assert dup == pytest.approx((a * base + np.linalg.norm(z[0] - v[k])) / (a + 1), rel=1e-12)


def test_score_errors():
    with pytest.raises(ContractError):
        anomaly_scores(np.zeros((1, 2)), np.zeros((0, 2)))
    with pytest.raises(ConfigError):
        anomaly_scores(np.zeros((1, 2)), np.ones((1, 2)), metric="manhattan")
    with pytest.raises(ContractError):
        AnomalyScore(-1.0)
    with pytest.raises(ContractError):
        AnomalyScore(float("nan"))


def test_cosine_metric():
    z = np.array([[1.0, 0.0]])
    v = np.array([[2.0, 0.0], [0.0, 5.0]])
    assert anomaly_scores(z, v, "cosine")[0] == pytest.approx(0.5)


# ---------------------------------------------------------------- auc


def test_auc_examples():
    assert auc([1, 2], [3, 4]) == 1.0
    assert auc([2, 2, 2], [2, 2]) == 0.5
    assert auc([1, 2], [1.5, 3]) == 0.75
    with pytest.raises(ContractError):
        auc([], [1.0])
    with pytest.raises(ContractError):
        auc([1.0], [])


@settings(max_examples=100, deadline=None)
@given(normal=scores, anomalous=scores)
def test_auc_rank_invariance_and_range(normal, anomalous):
    a = auc(normal, anomalous)
    assert 0.0 <= a <= 1.0
    warp = lambda s: 2.0 * np.asarray(s, dtype=float) ** 3 + s  # noqa: E731  strictly increasing
    assert auc(warp(normal), warp(anomalous)) == pytest.approx(a, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(normal=scores, anomalous=scores)
def test_auc_swap_is_complement_without_ties(normal, anomalous):
    if set(normal) & set(anomalous):
        return
    assert auc(anomalous, normal) == pytest.approx(1.0 - auc(normal, anomalous), abs=1e-12)


# ---------------------------------------------------------------- evaluate


def test_evaluate_report_and_determinism(tiny_manifest, tmp_path):
    params, _ = _encoder(tiny_manifest)
    cfg = EvalConfig(n_s=2, n_g=0, trials=4, seed=3)
    r1 = evaluate(tiny_manifest, params, None, cfg)
    r2 = evaluate(tiny_manifest, params, None, cfg)
    assert r1.per_category == r2.per_category
    assert set(r1.per_category) == set(tiny_manifest.categories)
    assert r1.trial_seeds == (3, 4, 5, 6)
    for aucs in r1.per_category.values():
        assert len(aucs) == 4 and all(0 <= a <= 1 for a in aucs)
    write_report(r1, tmp_path / "eval.csv", tmp_path / "eval.json")
    lines = (tmp_path / "eval.csv").read_text().splitlines()
    assert lines[0] == "category,mean_auc,std_auc,n_trials" and len(lines) == 4


def test_evaluate_skips_small_pool(tiny_manifest):
    params, _ = _encoder(tiny_manifest)
    # action0 has 3 test samples, so a support of 4 cannot be drawn
    r = evaluate(tiny_manifest, params, None, EvalConfig(n_s=4, n_g=0, trials=2))
    assert "action0" in r.skipped and "action0" not in r.per_category
    assert "action2" in r.per_category


def test_random_encoder_is_near_chance(tmp_path):
    # every category shares one generator, so labels carry no signal; on the
    # default corpus random weights already separate categories (see notes)
    spec = default_synthetic_spec(4, 16, 6, 20, seed=2)
    spec["categories"] = [{**spec["categories"][0], "name": f"action{k}"} for k in range(4)]
    manifest = write_dataset(generate_synthetic_corpus(spec, 0), tmp_path / "d", unseen=["action3"], seed=0)
    params, _ = _encoder(manifest, seed=5)
    r = evaluate(manifest, params, None, EvalConfig(n_s=3, n_g=0, trials=10))
    assert abs(r.mean_auc - 0.5) <= 0.15


def test_eval_config_validation():
    with pytest.raises(ConfigError):
        EvalConfig(n_s=0)
    with pytest.raises(ConfigError):
        EvalConfig(metric="l1")


# ---------------------------------------------------------------- sweep and export


def test_expand_grid_cardinality():
    grid = expand_grid(n_s=(1, 3, 5), n_g=(0, 10))
    assert len(grid) == 6
    assert {(p["n_s"], p["n_g"]) for p in grid} == {(s, g) for s in (1, 3, 5) for g in (0, 10)}
    g2 = expand_grid(observed=(30, 20), frame_length=60)
    assert [(p["o"], p["p"]) for p in g2] == [(30, 30), (20, 40)]


def test_sweep_rows_and_errors(tiny_manifest, tmp_path):
    params, _ = _encoder(tiny_manifest)
    aug = PerturbationAugmenter(0.05, observed_len=6)
    grid = expand_grid(n_s=(1, 2), n_g=(0, 2))
    out = sweep(tiny_manifest, params, aug, grid, EvalConfig(trials=2))
    assert len(out) == 4
    rows = [r for r, _ in out]
    assert all(r["o"] + r["p"] == tiny_manifest.frame_length for r in rows)
    assert rows[0]["o"] == 6
    write_sweep(rows, tmp_path / "sweep.csv")
    assert (tmp_path / "sweep.csv").read_text().startswith("n_s,n_g,o,p,mean_auc,mean_std")
    with pytest.raises(ConfigError):
        sweep(tiny_manifest, params, aug, [{"n_s": 1, "n_g": 0, "o": 5, "p": 5}])


def test_export_round_trip(tiny_manifest, tmp_path):
    params, basis = _encoder(tiny_manifest)
    samples = tiny_manifest.load_all(tiny_manifest.entries())
    rows = export_embeddings(params, basis, samples, tmp_path / "z.csv")
    assert len(rows) == len(samples) and len(rows[0]) == 2 + tiny_manifest.joints
    ids, cats, z = read_embeddings(tmp_path / "z.csv")
    assert ids == [s.sample_id for s in samples] and cats == [s.category for s in samples]
    np.testing.assert_allclose(z, np.array([r[2:] for r in rows]), atol=1e-6)
    twice = export_embeddings(params, basis, [samples[0], samples[0]])
    assert twice[0][2:] == twice[1][2:]
