"""Contrastive training of the action encoder over the seen categories."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import encoder as enc
from .errors import ConfigError, ContractError, DivergenceError
from .motion import DatasetManifest
from .optim import Adam, linear_lr
from .spectral import build_dct_basis, dct_encode

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    temperature: float = 1.0
    n_g: int = 3
    steps_per_epoch: int = 1
    cache_generations: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if not self.lr_start >= self.lr_end > 0:
            raise ConfigError("need lr_start >= lr_end > 0")
        if self.epochs < 1 or self.steps_per_epoch < 1 or self.n_g < 0:
            raise ConfigError("epochs and steps_per_epoch must be >= 1, n_g >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class BatchEntry:
    motion: np.ndarray
    category: str
    origin: str  # "real" or "generated"
    parent: int  # index of the real entry this came from (itself for reals)
    sample_id: str


@dataclass(frozen=True)
class Minibatch:
    entries: tuple

    def __len__(self):
        return len(self.entries)

    @property
    def categories(self) -> list:
        return [e.category for e in self.entries]

    def motions(self) -> np.ndarray:
        return np.stack([e.motion for e in self.entries])


def _draw_pairs(manifest: DatasetManifest, rng) -> list:
    reals = []
    for c in manifest.train_categories:
        pool = manifest.train_pool(c)
        if len(pool) < 2:
            raise ConfigError(f"training category {c!r} has {len(pool)} train samples; need at least 2")
        picks = rng.choice(len(pool), size=2, replace=False)
        reals.append(manifest.load_all(pool[i] for i in picks))
    return reals


def build_minibatch(manifest: DatasetManifest, augmenter, n_g: int, seed: int, cache: dict | None = None) -> Minibatch:
    """Two distinct train samples per seen category plus ``n_g`` generations of each.

    Order is category-major; within a category the two reals come first,
    followed by the generations of the first and then of the second. With a
    ``cache`` dict, generations are made once per sample id and reused.
    """
    if len(manifest.train_categories) < 1:
        raise ConfigError("manifest has no training categories")
    rng = np.random.default_rng(seed)
    pairs = _draw_pairs(manifest, rng)
    if augmenter is None:
        n_g = 0
    parents = [m for pair in pairs for m in pair]
    gen_seeds = [int(s) for s in rng.integers(0, 2**31 - 1, size=len(parents))]
    gens = [[] for _ in parents]
    if n_g > 0:
        todo = [k for k, m in enumerate(parents) if cache is None or m.sample_id not in cache]
        if todo:
            made = augmenter.augment_many([parents[k].motion for k in todo], n_g,
                                          [gen_seeds[k] for k in todo])
            for k, g in zip(todo, made):
                gens[k] = g
                if cache is not None:
                    cache[parents[k].sample_id] = g
        for k, m in enumerate(parents):
            if cache is not None:
                gens[k] = cache[m.sample_id]
    entries = []
    for c_idx, pair in enumerate(pairs):
        base = len(entries)
        for m in pair:
            entries.append(BatchEntry(m.motion, m.category, "real", len(entries), m.sample_id))
        for r, m in enumerate(pair):
            for i, g in enumerate(gens[2 * c_idx + r]):
                entries.append(BatchEntry(np.asarray(g), m.category, "generated", base + r, f"{m.sample_id}~g{i}"))
    return Minibatch(tuple(entries))


def positive_sets(categories) -> list:
    cats = list(categories)
    return [[j for j, c in enumerate(cats) if c == ci and j != i] for i, ci in enumerate(cats)]


def contrastive_loss(embeddings, categories, temperature: float = 1.0):
    """Multi-positive contrastive loss over cosine similarities.

    For anchor ``i`` with positives ``P(i)`` (same category, excluding ``i``)::

        l(i) = sum_{j in P(i)} -log( exp(s_ij / tau) / sum_{k != i} exp(s_ik / tau) )

    Returns ``(mean_i l(i), dL/dz)`` with the gradient shaped like ``embeddings``.
    """
    z = np.asarray(embeddings, dtype=np.float64)
    n = z.shape[0]
    if n < 2 or len(categories) != n:
        raise ContractError("need at least 2 embeddings with one category each")
    if not np.all(np.isfinite(z)):
        raise ContractError("embeddings contain non-finite values")
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0):
        raise ContractError(f"zero-norm embedding at index {int(np.argmin(norms))}; cosine similarity undefined")
    cats = np.asarray([str(c) for c in categories])
    pos = (cats[:, None] == cats[None, :]) & ~np.eye(n, dtype=bool)
    n_pos = pos.sum(axis=1)
    if np.any(n_pos == 0):
        raise ContractError(f"index {int(np.argmin(n_pos))} has no positive counterpart")

    u = z / norms[:, None]
    s = (u @ u.T) / temperature
    off = np.where(np.eye(n, dtype=bool), -np.inf, s)
    peak = off.max(axis=1, keepdims=True)
    expo = np.exp(off - peak)
    denom = expo.sum(axis=1, keepdims=True)
    lse = peak[:, 0] + np.log(denom[:, 0])
    per_anchor = n_pos * lse - np.where(pos, s, 0.0).sum(axis=1)
    loss = per_anchor.mean()

    # dL/ds_ik = (|P(i)| softmax_i(k) - [k in P(i)]) / n
    ds = (n_pos[:, None] * expo / denom - pos) / n
    du = (ds + ds.T) @ u / temperature
    dz = (du - u * np.sum(u * du, axis=1, keepdims=True)) / norms[:, None]
    return float(loss), dz


def train(manifest: DatasetManifest, encoder_config: enc.EncoderConfig, augmenter, config: TrainConfig,
          on_epoch=None):
    """Returns ``(params, log)``; ``log`` holds one ``{epoch, lr, loss}`` row per epoch.

    ``on_epoch(epoch, params, row)`` is called after each epoch (checkpointing).
    """
    if len(manifest.train_categories) < 2:
        raise ConfigError(f"need at least 2 training categories, got {len(manifest.train_categories)}")
    enc.check_compatible(encoder_config, manifest.joints, manifest.frame_length)
    basis = build_dct_basis(encoder_config.dct_components, manifest.frame_length)
    ss = np.random.SeedSequence(config.seed)
    init_seq, batch_seq = ss.spawn(2)
    params = enc.init_params(encoder_config, int(init_seq.generate_state(1)[0]))
    opt = Adam(params.tensors, config.beta1, config.beta2, config.eps)
    cache = {} if config.cache_generations else None
    rows = []
    step_seqs = iter(batch_seq.spawn(config.epochs * config.steps_per_epoch))
    for epoch in range(1, config.epochs + 1):
        lr = linear_lr(epoch, config.epochs, config.lr_start, config.lr_end)
        losses = []
        for step in range(config.steps_per_epoch):
            batch_seed = int(next(step_seqs).generate_state(1)[0])
            batch = build_minibatch(manifest, augmenter, config.n_g, batch_seed, cache)
            coeffs = dct_encode(basis, batch.motions())
            z = enc.forward(params, coeffs)
            try:
                loss, dz = contrastive_loss(z, batch.categories, config.temperature)
            except ContractError as exc:
                raise DivergenceError(f"epoch {epoch} step {step + 1}: {exc}") from exc
            if not np.isfinite(loss):
                raise DivergenceError(f"epoch {epoch} step {step + 1}: non-finite loss {loss}")
            grads = enc.backward(params, coeffs, dz)
            params = params.replace(opt.step(params.tensors, grads, lr))
            losses.append(loss)
        row = {"epoch": epoch, "lr": lr, "loss": float(np.mean(losses))}
        rows.append(row)
        log.info("epoch %d lr %.3g loss %.5f", epoch, lr, row["loss"])
        if on_epoch is not None:
            on_epoch(epoch, params, row)
    return params, rows


def save_encoder(path, params: enc.EncoderParams, meta: dict | None = None) -> None:
    from .checkpoint import save_checkpoint

    save_checkpoint(path, "encoder", params.tensors, params.config.to_dict(), meta)


def load_encoder(path) -> enc.EncoderParams:
    from .checkpoint import load_checkpoint

    header, tensors = load_checkpoint(path, "encoder")
    return enc.EncoderParams(enc.EncoderConfig(**header["config"]), tensors)
