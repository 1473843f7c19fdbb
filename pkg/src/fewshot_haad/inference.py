"""Few-shot scoring against a support set, AUC evaluation and sensitivity sweeps."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import encoder as enc
from .errors import ConfigError, ContractError
from .motion import DatasetManifest, SupportSet, check_motion, sample_support_set, scored_pool
from .spectral import DctBasis, build_dct_basis, dct_encode

log = logging.getLogger(__name__)

METRICS = ("euclidean", "cosine")


@dataclass(frozen=True)
class AnomalyScore:
    value: float
    sample_id: str = ""
    support_category: str = ""

    def __post_init__(self):
        if not (np.isfinite(self.value) and self.value >= 0):
            raise ContractError(f"anomaly score must be finite and >= 0, got {self.value}")


def embed(params: enc.EncoderParams, basis: DctBasis, motions) -> np.ndarray:
    """(N, H, 3J) motions -> (N, J) embeddings."""
    x = np.asarray(motions, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if len(x) == 0:
        return np.zeros((0, params.config.joint_count))
    return enc.forward(params, dct_encode(basis, x))


def support_embeddings(params, basis, support: SupportSet, augmenter, n_g: int, seed: int) -> np.ndarray:
    """Embeddings of every support member followed by its ``n_g`` generations.

    Member ``k`` is augmented with seed ``seed + k * n_g`` so generations of
    different members never share a noise stream.
    """
    if len(support) < 1:
        raise ContractError("support set is empty")
    members = [check_motion(m) for m in support.members]
    if augmenter is None or n_g < 1:
        return embed(params, basis, members)
    gens = augmenter.augment_many(members, n_g, [seed + k * n_g for k in range(len(members))])
    stack = []
    for m, g in zip(members, gens):
        stack.append(m)
        stack.extend(g)
    return embed(params, basis, stack)


def anomaly_scores(z, support_vectors, metric: str = "euclidean") -> np.ndarray:
    """Mean distance from each row of ``z`` to all support vectors."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    v = np.atleast_2d(np.asarray(support_vectors, dtype=np.float64))
    if v.shape[0] < 1:
        raise ContractError("support set is empty")
    if metric == "euclidean":
        d = np.linalg.norm(z[:, None, :] - v[None, :, :], axis=2)
    elif metric == "cosine":
        zn = z / np.linalg.norm(z, axis=1, keepdims=True)
        vn = v / np.linalg.norm(v, axis=1, keepdims=True)
        d = 1.0 - zn @ vn.T
    else:
        raise ConfigError(f"metric must be one of {METRICS}")
    return np.maximum(d.mean(axis=1), 0.0)


def score(params, basis, support: SupportSet, augmenter, n_g: int, test, seed: int,
          metric: str = "euclidean", sample_id: str = "") -> AnomalyScore:
    v = support_embeddings(params, basis, support, augmenter, n_g, seed)
    z = embed(params, basis, check_motion(test))
    return AnomalyScore(float(anomaly_scores(z, v, metric)[0]), sample_id, support.category)


def auc(scores_normal, scores_anomalous) -> float:
    """Fraction of (anomalous, normal) pairs ordered correctly; ties count 1/2."""
    n = np.asarray(scores_normal, dtype=np.float64).ravel()
    a = np.asarray(scores_anomalous, dtype=np.float64).ravel()
    if n.size == 0 or a.size == 0:
        raise ContractError("auc needs at least one normal and one anomalous score")
    cmp = np.sign(a[:, None] - n[None, :])
    return float((np.sum(cmp > 0) + 0.5 * np.sum(cmp == 0)) / (a.size * n.size))


# --------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class EvalConfig:
    n_s: int = 3
    n_g: int = 10
    trials: int = 10
    seed: int = 0
    metric: str = "euclidean"
    categories: tuple | None = None

    def __post_init__(self):
        if self.n_s < 1 or self.trials < 1 or self.n_g < 0:
            raise ConfigError("n_s and trials must be >= 1, n_g >= 0")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}")

    @property
    def trial_seeds(self) -> list:
        return [self.seed + k for k in range(self.trials)]

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class EvalReport:
    per_category: dict  # category -> list of per-trial AUCs
    trial_seeds: tuple
    config: dict
    skipped: dict = field(default_factory=dict)  # category -> reason

    def category_mean(self, c) -> float:
        return float(np.mean(self.per_category[c]))

    def category_std(self, c) -> float:
        return float(np.std(self.per_category[c]))

    @property
    def mean_auc(self) -> float:
        return float(np.mean([self.category_mean(c) for c in self.per_category]))

    @property
    def mean_std(self) -> float:
        """Per-category cross-trial std, averaged over categories."""
        return float(np.mean([self.category_std(c) for c in self.per_category]))

    @property
    def trial_std(self) -> float:
        """Std across trials of the all-category mean AUC."""
        per_trial = np.mean([self.per_category[c] for c in self.per_category], axis=0)
        return float(np.std(per_trial))

    def rows(self) -> list:
        return [
            {"category": c, "mean_auc": self.category_mean(c), "std_auc": self.category_std(c),
             "n_trials": len(self.per_category[c])}
            for c in self.per_category
        ]

    def summary(self) -> dict:
        return {
            "mean_auc": self.mean_auc,
            "mean_std": self.mean_std,
            "trial_std": self.trial_std,
            "categories": {r["category"]: {"mean_auc": r["mean_auc"], "std_auc": r["std_auc"]} for r in self.rows()},
            "skipped": dict(self.skipped),
            "trial_seeds": list(self.trial_seeds),
            "config": self.config,
        }


def evaluate(manifest: DatasetManifest, params: enc.EncoderParams, augmenter, config: EvalConfig) -> EvalReport:
    """Per category and trial: draw a support set from that category's test pool,
    score every other test sample, and compute AUC with the category as normal."""
    enc.check_compatible(params.config, manifest.joints, manifest.frame_length)
    basis = build_dct_basis(params.config.dct_components, manifest.frame_length)
    tests = manifest.entries(splits=("test", "unseen-test"))
    ids = [e.sample_id for e in tests]
    cats = np.array([e.category for e in tests])
    z_all = embed(params, basis, [manifest.load(e).motion for e in tests])
    row_of = {sid: k for k, sid in enumerate(ids)}

    categories = list(config.categories or manifest.categories)
    per_cat, skipped = {}, {}
    for c_idx, c in enumerate(categories):
        aucs = []
        for trial, tseed in enumerate(config.trial_seeds):
            seed = int(np.random.SeedSequence([tseed, c_idx]).generate_state(1)[0])
            try:
                support = sample_support_set(manifest, c, config.n_s, seed)
            except ContractError as exc:
                log.warning("skipping category %s: %s", c, exc)
                skipped[c] = str(exc)
                break
            v = support_embeddings(params, basis, support, augmenter, config.n_g, seed)
            keep = np.array([row_of[e.sample_id] for e in scored_pool(manifest, support)])
            s = anomaly_scores(z_all[keep], v, config.metric)
            normal = cats[keep] == c
            if normal.all() or not normal.any():
                skipped[c] = "no normal or no anomalous samples left to score"
                break
            aucs.append(auc(s[normal], s[~normal]))
        if c not in skipped:
            per_cat[c] = aucs
    snapshot = config.to_dict()
    snapshot["augmenter"] = getattr(augmenter, "kind", "none")
    return EvalReport(per_cat, tuple(config.trial_seeds), snapshot, skipped)


def write_report(report: EvalReport, csv_path, json_path=None) -> None:
    import json

    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["category", "mean_auc", "std_auc", "n_trials"])
        w.writeheader()
        w.writerows(report.rows())
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump(report.summary(), fh, indent=2)


# --------------------------------------------------------------------------
# sweeps


SWEEP_FIELDS = ["n_s", "n_g", "o", "p", "mean_auc", "mean_std"]


def sweep(manifest: DatasetManifest, params, augmenter, grid, base: EvalConfig | None = None) -> list:
    """Run :func:`evaluate` for every grid point.

    ``grid`` items are dicts with ``n_s``, ``n_g`` and optionally ``o``/``p``
    (observed/predicted lengths, which must sum to the frame length).
    Returns ``(row, report)`` pairs.
    """
    base = base or EvalConfig()
    h = manifest.frame_length
    out = []
    for point in grid:
        o = int(point.get("o", getattr(augmenter, "observed_len", h // 2)))
        p = int(point.get("p", h - o))
        if o + p != h:
            raise ConfigError(f"grid point o={o}, p={p} does not sum to frame length {h}")
        aug = augmenter.with_observed_len(o) if augmenter is not None else None
        cfg = replace(base, n_s=int(point.get("n_s", base.n_s)), n_g=int(point.get("n_g", base.n_g)))
        report = evaluate(manifest, params, aug, cfg)
        row = {"n_s": cfg.n_s, "n_g": cfg.n_g, "o": o, "p": p,
               "mean_auc": report.mean_auc, "mean_std": report.mean_std}
        log.info("sweep %s", row)
        out.append((row, report))
    return out


def expand_grid(n_s=(3,), n_g=(0,), observed=(None,), frame_length: int = 60) -> list:
    grid = []
    for o in observed:
        for s in n_s:
            for g in n_g:
                point = {"n_s": s, "n_g": g}
                if o is not None:
                    point.update(o=o, p=frame_length - o)
                grid.append(point)
    return grid


def write_sweep(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        w.writeheader()
        w.writerows(rows)


# --------------------------------------------------------------------------
# embedding export


def export_embeddings(params, basis, samples, path=None) -> list:
    """Rows of ``[sample_id, category, z_0, ..., z_{J-1}]``; written as CSV if ``path`` is given."""
    samples = list(samples)
    z = embed(params, basis, [s.motion for s in samples])
    rows = [[s.sample_id, s.category, *map(float, zi)] for s, zi in zip(samples, z)]
    if path is not None:
        j = params.config.joint_count
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "category", *[f"z{k}" for k in range(j)]])
            for r in rows:
                w.writerow(r[:2] + [repr(x) for x in r[2:]])
    return rows


def read_embeddings(path) -> tuple[list, list, np.ndarray]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        rows = list(r)
    return [x[0] for x in rows], [x[1] for x in rows], np.array([[float(v) for v in x[2:]] for x in rows])
