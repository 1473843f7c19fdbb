"""Frequency-domain diffusion motion completion and the augmenters built on it.

The diffusion model works on truncated DCT spectra standardised as
``(C - center) / scale`` with a per-entry center and one global scale. The
observed/predicted temporal fusion is applied to de-standardised spectra, so it
acts on actual motion coefficients.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Protocol

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import expit, softmax

from .errors import CompatibilityError, ConfigError, ContractError
from .motion import check_motion
from .optim import Adam
from .spectral import DIFFUSION_DCT_COMPONENTS, DctBasis, build_dct_basis, dct_encode, idct_decode

log = logging.getLogger(__name__)

COSINE_OFFSET = 0.008
MAX_BETA = 0.999
# denoised-spectrum clip, relative to the largest normalised training entry
CLIP_MARGIN = 1.5
# analytic prior: mixture size, per-cluster rank, and the variance assumed
# off each cluster's principal subspace
PRIOR_COMPONENTS = 256
PRIOR_RANK = 10
PRIOR_FLOOR = 1e-2


# --------------------------------------------------------------------------
# noise schedule


@dataclass(frozen=True)
class NoiseSchedule:
    """``alpha_bar[t - 1]`` is the cumulative signal fraction at step ``t`` (1..steps)."""

    alpha_bar: np.ndarray
    kind: str = "cosine"

    def __post_init__(self):
        a = np.asarray(self.alpha_bar, dtype=np.float64)
        if a.ndim != 1 or a.size < 1:
            raise ContractError("alpha_bar must be a non-empty vector")
        if np.any(a <= 0) or np.any(a > 1) or np.any(np.diff(a) >= 0):
            raise ContractError("alpha_bar must lie in (0, 1] and be strictly decreasing")

    @property
    def steps(self) -> int:
        return len(self.alpha_bar)

    def at(self, t: int) -> float:
        """Cumulative alpha at step ``t``; step 0 is the clean signal (1.0)."""
        if t == 0:
            return 1.0
        if not 1 <= t <= self.steps:
            raise ContractError(f"step {t} outside [0, {self.steps}]")
        return float(self.alpha_bar[t - 1])


def cosine_alpha_bar(t, steps: int, s: float = COSINE_OFFSET):
    f = lambda u: np.cos((u / steps + s) / (1 + s) * np.pi / 2) ** 2  # noqa: E731
    return f(np.asarray(t, dtype=np.float64)) / f(0.0)


def build_cosine_schedule(steps: int = 100) -> NoiseSchedule:
    if steps < 1:
        raise ContractError(f"steps must be >= 1, got {steps}")
    a = cosine_alpha_bar(np.arange(1, steps + 1), steps)
    # the closed form hits 0 at t = steps; cap per-step betas instead
    prev = 1.0
    for i in range(steps):
        if 1.0 - a[i] / prev > MAX_BETA:
            a[i] = prev * (1.0 - MAX_BETA)
        prev = a[i]
    a.setflags(write=False)
    return NoiseSchedule(a, "cosine")


def forward_noise(schedule: NoiseSchedule, c0, t: int, noise) -> np.ndarray:
    """``sqrt(abar_t) * c0 + sqrt(1 - abar_t) * noise``."""
    c0 = np.asarray(c0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if c0.shape != noise.shape:
        raise ContractError(f"noise shape {noise.shape} does not match spectrum {c0.shape}")
    a = schedule.at(t)
    return np.sqrt(a) * c0 + np.sqrt(1.0 - a) * noise


# --------------------------------------------------------------------------
# noise predictor: analytic mixture path plus a residual MLP
#
# eps_theta(x, t) = skip[t] * g(x, t) + gate[t] * mlp(x, t),  gate[t] = sqrt(abar_t)
#
# g is the exact noise posterior mean E[eps | x_t] when the clean normalised
# spectra follow a mixture of K low-rank Gaussians
#   N(mu_k, V_k^T diag(lam_k) V_k + floor * I)
# fitted to the training spectra (k-means clusters, PCA inside each). It stays
# frozen; the MLP and the per-step gain ``skip`` are trained on what it misses.
# The gate keeps MLP errors from being amplified by 1 / sqrt(abar_t) when the
# sampler recovers C_0 at the noisiest steps: its share of C_0 is
# sqrt(1 - abar_t) * mlp.


def timestep_embedding(t, dim: int) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    ang = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb


def _silu(a):
    return a * expit(a)


def _silu_grad(a):
    s = expit(a)
    return s * (1.0 + a * (1.0 - s))


@dataclass(frozen=True)
class PredictorConfig:
    input_dim: int
    steps: int = 100
    hidden: int = 256
    blocks: int = 2
    time_dim: int = 64

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class NoisePredictorParams:
    config: PredictorConfig
    tensors: dict = field(repr=False)

    def predict(self, x: np.ndarray, t) -> np.ndarray:
        return _predictor_forward(self, x, t)[0]


class ZeroPredictor:
    """epsilon_theta == 0; useful as a closed-form reference."""

    def predict(self, x, t):
        return np.zeros_like(np.asarray(x, dtype=np.float64))


def mixture_prior(flat, schedule: NoiseSchedule, components: int = PRIOR_COMPONENTS,
                  rank: int = PRIOR_RANK, floor: float = PRIOR_FLOOR, seed: int = 0) -> dict:
    """Frozen ``prior.*`` tensors from normalised training spectra ``flat`` (n, D)."""
    flat = np.asarray(flat, dtype=np.float64)
    n, d = flat.shape
    k = max(1, min(components, n))
    if k == 1:
        labels = np.zeros(n, dtype=int)
    elif k == n:
        labels = np.arange(n)  # one component per spectrum
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # empty clusters are dropped below
            labels = kmeans2(flat, k, seed=seed, minit="++")[1]
    mus, vs, lams, weights = [], [], [], []
    for c in range(k):
        xc = flat[labels == c]
        if len(xc) == 0:
            continue
        mu = xc.mean(axis=0)
        _, sv, vt = np.linalg.svd(xc - mu, full_matrices=False)
        lam = sv**2 / len(xc)
        r = min(rank, int(np.sum(lam > 1e-8 * max(lam.max(), 1e-300))))
        v = np.zeros((rank, d))
        v[:r] = vt[:r]
        l_c = np.zeros(rank)
        l_c[:r] = lam[:r]
        mus.append(mu)
        vs.append(v)
        lams.append(l_c)
        weights.append(len(xc) / n)
    # drop padding no component uses (single-spectrum components have none)
    used = max(int(np.sum(l_c > 0)) for l_c in lams)
    return {
        "prior.mu": np.array(mus),
        "prior.V": np.array(vs)[:, :used],
        "prior.lam": np.array(lams)[:, :used],
        "prior.logw": np.log(weights),
        "prior.abar": np.array(schedule.alpha_bar, dtype=np.float64),
        "prior.floor": np.array([floor]),
    }


def _empty_prior(config: PredictorConfig) -> dict:
    d = config.input_dim
    return {"prior.mu": np.zeros((0, d)), "prior.V": np.zeros((0, 0, d)), "prior.lam": np.zeros((0, 0)),
            "prior.logw": np.zeros(0), "prior.abar": np.zeros(config.steps), "prior.floor": np.zeros(1)}


def init_predictor(config: PredictorConfig, seed: int, prior: dict | None = None,
                   alpha_bar=None) -> NoisePredictorParams:
    """Random MLP weights, unit ``skip`` gain, zero MLP output.

    Without ``prior`` the analytic path is zero; without ``alpha_bar`` the MLP
    gate is 1 at every step.
    """
    rng = np.random.default_rng(seed)

    def uni(fan_in, shape, gain=1.0):
        b = gain * np.sqrt(3.0 / fan_in)
        return rng.uniform(-b, b, shape)

    d, h, e = config.input_dim, config.hidden, config.time_dim
    p = {"in.Wx": uni(d, (d, h)), "in.We": uni(e, (e, h)), "in.b": np.zeros(h)}
    for k in range(config.blocks):
        p[f"block{k}.W1"] = uni(h, (h, h))
        p[f"block{k}.We"] = uni(e, (e, h))
        p[f"block{k}.b1"] = np.zeros(h)
        p[f"block{k}.W2"] = uni(h, (h, h), 0.5)
        p[f"block{k}.b2"] = np.zeros(h)
    p["out.W"] = np.zeros((h, d))  # start from the analytic path exactly
    p["out.b"] = np.zeros(d)
    p["skip"] = np.ones(config.steps)
    p["gate"] = np.ones(config.steps) if alpha_bar is None else np.sqrt(np.asarray(alpha_bar, dtype=np.float64))
    p.update(_empty_prior(config) if prior is None else {k: np.asarray(v, dtype=np.float64) for k, v in prior.items()})
    return NoisePredictorParams(config, p)


def _prior_path(p, x, t):
    """Posterior mean of the noise under the frozen mixture, all components at once.

    Component k has covariance ``V_k' diag(lam_k) V_k + floor I``; after noising
    to level a its principal variances are ``a lam + s`` and the rest ``s``.
    """
    mus = p["prior.mu"]
    if len(mus) == 0:
        return np.zeros_like(x)
    v, lam = p["prior.V"], p["prior.lam"]
    a = p["prior.abar"][t - 1][:, None]  # (B, 1)
    ra = np.sqrt(a)
    s = a * p["prior.floor"][0] + 1.0 - a
    d = x.shape[1]
    # y_kb = x_b - sqrt(a_b) mu_k is never formed; only its projections and norms
    k, r = lam.shape
    vf = v.reshape(k * r, d)
    py = (x @ vf.T).reshape(len(x), k, r).transpose(1, 0, 2) - ra[None] * np.einsum("kd,krd->kr", mus, v)[:, None, :]
    yy = (np.sum(x * x, axis=1)[None] - 2.0 * ra[:, 0] * (mus @ x.T)
          + a[:, 0] * np.sum(mus * mus, axis=1)[:, None])  # (K, B)
    ev = a[None] * lam[:, None, :] + s[None]  # (K, B, r)
    pp = np.sum(py * py, axis=2)
    maha = np.sum(py * py / ev, axis=2) + (yy - pp) / s[:, 0]
    logdet = np.sum(np.log(ev), axis=2) + (d - lam.shape[1]) * np.log(s[:, 0])
    resp = softmax(p["prior.logw"][:, None] - 0.5 * (maha + logdet), axis=0)  # (K, B)
    w = resp[:, :, None] * py * (1.0 / ev - 1.0 / s[None])
    mean = (x - ra * (resp.T @ mus)) / s + w.transpose(1, 0, 2).reshape(len(x), k * r) @ vf
    return np.sqrt(1.0 - a) * mean


def _predictor_forward(params: NoisePredictorParams, x, t):
    p, cfg = params.tensors, params.config
    x = np.asarray(x, dtype=np.float64)
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (x.shape[0],))
    emb = timestep_embedding(t, cfg.time_dim)
    h = x @ p["in.Wx"] + emb @ p["in.We"] + p["in.b"]
    g = _prior_path(p, x, t)
    tape = [(x, emb, t, g)]
    for k in range(cfg.blocks):
        a = h @ p[f"block{k}.W1"] + emb @ p[f"block{k}.We"] + p[f"block{k}.b1"]
        s = _silu(a)
        tape.append((h, a, s))
        h = h + s @ p[f"block{k}.W2"] + p[f"block{k}.b2"]
    tape.append(h)
    gain = p["skip"][t - 1][:, None]
    gate = p["gate"][t - 1][:, None]
    return gain * g + gate * (h @ p["out.W"] + p["out.b"]), tape


def _predictor_loss_grad(params: NoisePredictorParams, x, t, eps):
    """Mean over the batch of ``||eps - eps_theta(x, t)||^2`` and its parameter gradients."""
    p, cfg = params.tensors, params.config
    out, tape = _predictor_forward(params, x, t)
    diff = out - eps
    n = x.shape[0]
    loss_sum = float(np.sum(diff * diff))
    dout = 2.0 * diff / n
    dmlp = dout * p["gate"][np.broadcast_to(np.asarray(t, dtype=np.int64), (n,)) - 1][:, None]
    g = {}
    h = tape.pop()
    g["out.W"] = h.T @ dmlp
    g["out.b"] = dmlp.sum(0)
    dh = dmlp @ p["out.W"].T
    for k in reversed(range(cfg.blocks)):
        h_in, a, s = tape.pop()
        g[f"block{k}.W2"] = s.T @ dh
        g[f"block{k}.b2"] = dh.sum(0)
        da = (dh @ p[f"block{k}.W2"].T) * _silu_grad(a)
        g[f"block{k}.W1"] = h_in.T @ da
        g[f"block{k}.We"] = da
        g[f"block{k}.b1"] = da.sum(0)
        dh = dh + da @ p[f"block{k}.W1"].T
    x, emb, t, prior = tape.pop()
    for k in range(cfg.blocks):
        g[f"block{k}.We"] = emb.T @ g[f"block{k}.We"]
    g["in.Wx"] = x.T @ dh
    g["in.We"] = emb.T @ dh
    g["in.b"] = dh.sum(0)
    g["skip"] = np.bincount(t - 1, weights=np.sum(dout * prior, axis=1), minlength=cfg.steps)
    return loss_sum / n, g


# --------------------------------------------------------------------------
# diffusion model bundle


@dataclass(frozen=True)
class DiffusionConfig:
    steps: int = 100
    dct_components: int = DIFFUSION_DCT_COMPONENTS
    hidden: int = 256
    blocks: int = 2
    time_dim: int = 64
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    lr_end: float = 1e-4
    grad_chunks: int = 1
    validation_size: int = 64
    prior_components: int = PRIOR_COMPONENTS  # 0 disables the analytic path
    prior_rank: int = PRIOR_RANK
    prior_floor: float = PRIOR_FLOOR

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class DiffusionModel:
    predictor: object
    schedule: NoiseSchedule
    basis: DctBasis
    center: np.ndarray
    scale: np.ndarray
    joints: int
    clip: float | None = None

    @property
    def frame_length(self) -> int:
        return self.basis.frame_count

    def normalize(self, coeffs):
        return (coeffs - self.center) / self.scale

    def denormalize(self, coeffs):
        return coeffs * self.scale + self.center


def _stack(corpus) -> np.ndarray:
    motions = [check_motion(m) for m in corpus]
    if not motions:
        raise ConfigError("diffusion training corpus is empty")
    shapes = {m.shape for m in motions}
    if len(shapes) != 1:
        raise ConfigError(f"corpus motions must share one shape, got {sorted(shapes)}")
    return np.stack(motions)


def noise_loss(model: DiffusionModel, spectra, t, eps) -> float:
    """Batch mean of ``||eps - eps_theta(C_t, t)||^2`` on normalised spectra."""
    a = np.array([model.schedule.at(int(s)) for s in np.atleast_1d(t)])[:, None]
    x = np.sqrt(a) * spectra + np.sqrt(1.0 - a) * eps
    pred = model.predictor.predict(x, t)
    return float(np.mean(np.sum((pred - eps) ** 2, axis=1)))


def train_diffusion(corpus, config: DiffusionConfig | None = None, seed: int = 0):
    """Fit the noise predictor on ``corpus`` (a list of motions).

    Returns ``(model, log)`` where ``log`` has the per-epoch mean loss and the
    validation loss before and after training.
    """
    config = config or DiffusionConfig()
    x = _stack(corpus)
    n, h, width = x.shape
    if config.dct_components > h:
        raise ConfigError(f"diffusion.dct_components={config.dct_components} exceeds frame length {h}")
    basis = build_dct_basis(config.dct_components, h)
    schedule = build_cosine_schedule(config.steps)
    spectra = dct_encode(basis, x)
    center = spectra.mean(axis=0)
    spread = float(np.std(spectra - center))
    scale = np.full(center.shape, spread if spread > 0 else 1.0)
    flat = ((spectra - center) / scale).reshape(n, -1)
    d = flat.shape[1]
    clip = CLIP_MARGIN * float(np.abs(flat).max())

    ss = np.random.SeedSequence(seed)
    init_seq, val_seq, train_seq = ss.spawn(3)
    pcfg = PredictorConfig(d, config.steps, config.hidden, config.blocks, config.time_dim)
    init_seed, prior_seed = (int(v) for v in init_seq.generate_state(2))
    prior = None
    if config.prior_components > 0:
        prior = mixture_prior(flat, schedule, config.prior_components, config.prior_rank, config.prior_floor,
                              seed=prior_seed)
    params = init_predictor(pcfg, init_seed, prior, schedule.alpha_bar)
    model = DiffusionModel(params, schedule, basis, center, scale, width // 3, clip)

    vrng = np.random.default_rng(val_seq)
    vidx = vrng.integers(0, n, config.validation_size)
    vt = vrng.integers(1, config.steps + 1, config.validation_size)
    veps = vrng.standard_normal((config.validation_size, d))
    val_initial = noise_loss(model, flat[vidx], vt, veps)

    rng = np.random.default_rng(train_seq)
    opt = Adam(params.tensors)
    tensors = params.tensors
    abar = np.concatenate([[1.0], schedule.alpha_bar])
    history = []
    pool = ThreadPoolExecutor(config.grad_chunks) if config.grad_chunks > 1 else None
    try:
        for epoch in range(1, config.epochs + 1):
            lr = config.lr if config.epochs == 1 else (
                config.lr + (epoch - 1) / (config.epochs - 1) * (config.lr_end - config.lr))
            order = rng.permutation(n)
            total, count = 0.0, 0
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                t = rng.integers(1, config.steps + 1, len(idx))
                eps = rng.standard_normal((len(idx), d))
                a = abar[t][:, None]
                xt = np.sqrt(a) * flat[idx] + np.sqrt(1.0 - a) * eps
                current = NoisePredictorParams(pcfg, tensors)
                loss, grads = _accumulated_grad(current, xt, t, eps, config.grad_chunks, pool)
                if not np.isfinite(loss):
                    raise FloatingPointError(f"diffusion loss diverged at epoch {epoch}")
                tensors = opt.step(tensors, grads, lr)
                total += loss * len(idx)
                count += len(idx)
            history.append(total / count)
            log.debug("diffusion epoch %d loss %.5f", epoch, history[-1])
    finally:
        if pool is not None:
            pool.shutdown()
    model = DiffusionModel(NoisePredictorParams(pcfg, tensors), schedule, basis, center, scale, width // 3, clip)
    val_final = noise_loss(model, flat[vidx], vt, veps)
    return model, {"loss": history, "val_initial": val_initial, "val_final": val_final}


def _accumulated_grad(params, x, t, eps, chunks, pool):
    if chunks <= 1:
        return _predictor_loss_grad(params, x, t, eps)
    parts = [p for p in np.array_split(np.arange(len(x)), chunks) if len(p)]
    jobs = [pool.submit(_predictor_loss_grad, params, x[p], t[p], eps[p]) for p in parts]
    loss, grads = 0.0, None
    for p, job in zip(parts, jobs):
        l_k, g_k = job.result()
        w = len(p) / len(x)
        loss += w * l_k
        grads = {k: w * v for k, v in g_k.items()} if grads is None else {
            k: grads[k] + w * g_k[k] for k in grads}
    return loss, grads


# --------------------------------------------------------------------------
# DDIM sampling with DCT-completion


@dataclass(frozen=True)
class CompletionMask:
    observed_len: int
    predicted_len: int

    def __post_init__(self):
        if self.observed_len < 0 or self.predicted_len < 0 or self.observed_len + self.predicted_len < 1:
            raise ContractError("observed and predicted lengths must be >= 0 with a positive sum")

    @property
    def length(self) -> int:
        return self.observed_len + self.predicted_len

    @property
    def mask(self) -> np.ndarray:
        return np.concatenate([np.ones(self.observed_len), np.zeros(self.predicted_len)])


def fuse(basis: DctBasis, mask: np.ndarray, c_noisy, c_denoised) -> np.ndarray:
    """Keep observed frames from ``c_noisy`` and the rest from ``c_denoised``."""
    m = mask[:, None]
    return dct_encode(basis, m * idct_decode(basis, c_noisy) + (1.0 - m) * idct_decode(basis, c_denoised))


def _ddim_batch(model: DiffusionModel, schedule: NoiseSchedule, observed, mask: CompletionMask,
                seeds, on_step=None) -> np.ndarray:
    basis = model.basis
    obs = model.normalize(dct_encode(basis, observed))  # (B, M, D)
    b, m, d = obs.shape
    rngs = [np.random.default_rng(s) for s in seeds]
    c = np.stack([r.standard_normal((m, d)) for r in rngs])
    mvec = mask.mask
    for t in range(schedule.steps, 0, -1):
        a_t, a_prev = schedule.at(t), schedule.at(t - 1)
        eps = model.predictor.predict(c.reshape(b, -1), t).reshape(b, m, d)
        c0_hat = (c - np.sqrt(1.0 - a_t) * eps) / np.sqrt(a_t)
        if model.clip is not None:
            c0_hat = np.clip(c0_hat, -model.clip, model.clip)
        c_d = np.sqrt(a_prev) * c0_hat + np.sqrt(1.0 - a_prev) * eps
        noise = np.stack([r.standard_normal((m, d)) for r in rngs])
        c_n = np.sqrt(a_prev) * obs + np.sqrt(1.0 - a_prev) * noise
        c = model.normalize(fuse(basis, mvec, model.denormalize(c_n), model.denormalize(c_d)))
        if on_step is not None:
            on_step(t, c_n, c_d, c)
    return idct_decode(basis, model.denormalize(c))


def _check_sampler_inputs(model, schedule, mask, frames, width):
    if schedule.steps != model.schedule.steps:
        raise ContractError(
            f"schedule has {schedule.steps} steps but the model was trained with {model.schedule.steps}"
        )
    if mask.length != model.frame_length or frames != model.frame_length:
        raise ContractError(
            f"mask length {mask.length} / motion length {frames} must equal model frame length {model.frame_length}"
        )
    if width != 3 * model.joints:
        raise CompatibilityError(f"motion has {width // 3} joints, model expects {model.joints}")


def ddim_sample_with_completion(model: DiffusionModel, schedule: NoiseSchedule, observed,
                                mask: CompletionMask, n_g: int, seed: int, on_step=None) -> list:
    """Draw ``n_g`` completions of ``observed``; sample ``i`` is seeded with ``seed + i``.

    ``on_step(t, c_noisy, c_denoised, c_fused)`` is called after every reverse
    step with stacked (n_g, M, 3J) spectra in normalised space.
    """
    x = check_motion(observed)
    _check_sampler_inputs(model, schedule, mask, *x.shape)
    if n_g < 1:
        return []
    out = _ddim_batch(model, schedule, np.broadcast_to(x, (n_g,) + x.shape), mask,
                      [seed + i for i in range(n_g)], on_step)
    return list(out)


# --------------------------------------------------------------------------
# augmenters


class Augmenter(Protocol):
    def augment(self, motion, n_g: int, seed: int) -> list: ...

    def augment_many(self, motions, n_g: int, seeds) -> list: ...


class DiffusionAugmenter:
    """Completes the last ``P`` frames of each motion with the diffusion model."""

    kind = "diffusion"

    def __init__(self, model: DiffusionModel, observed_len: int = 30, batch: int = 64):
        self.model = model
        self.mask = CompletionMask(observed_len, model.frame_length - observed_len)
        self.batch = batch

    @property
    def observed_len(self) -> int:
        return self.mask.observed_len

    def with_observed_len(self, observed_len: int) -> "DiffusionAugmenter":
        return DiffusionAugmenter(self.model, observed_len, self.batch)

    def augment(self, motion, n_g, seed):
        return ddim_sample_with_completion(self.model, self.model.schedule, motion, self.mask, n_g, seed)

    def augment_many(self, motions, n_g, seeds):
        """Same result as calling :meth:`augment` per motion, batched for speed."""
        motions = [check_motion(m) for m in motions]
        if n_g < 1 or not motions:
            return [[] for _ in motions]
        for m in motions:
            _check_sampler_inputs(self.model, self.model.schedule, self.mask, *m.shape)
        jobs = [(k, i) for k in range(len(motions)) for i in range(n_g)]
        out = [[None] * n_g for _ in motions]
        for start in range(0, len(jobs), self.batch):
            chunk = jobs[start:start + self.batch]
            stack = np.stack([motions[k] for k, _ in chunk])
            res = _ddim_batch(self.model, self.model.schedule, stack, self.mask,
                              [seeds[k] + i for k, i in chunk])
            for (k, i), r in zip(chunk, res):
                out[k][i] = r
        return out


class PerturbationAugmenter:
    """Adds low-frequency Gaussian jitter to the predicted segment only.

    The jitter is ``T_P^T g`` with ``g ~ N(0, sigma^2)`` on the first
    ``m_components`` DCT coefficients of a basis over the ``P`` predicted
    frames, so observed frames are untouched and the added signal is
    band-limited on the segment it occupies.
    """

    kind = "perturb"

    def __init__(self, sigma: float, observed_len: int = 30, m_components: int = DIFFUSION_DCT_COMPONENTS):
        if sigma < 0:
            raise ContractError(f"sigma must be >= 0, got {sigma}")
        self.sigma = sigma
        self.observed_len = observed_len
        self.m_components = m_components

    def with_observed_len(self, observed_len: int) -> "PerturbationAugmenter":
        return PerturbationAugmenter(self.sigma, observed_len, self.m_components)

    def augment(self, motion, n_g, seed):
        x = check_motion(motion)
        p = x.shape[0] - self.observed_len
        if p < 0:
            raise ContractError(f"motion has {x.shape[0]} frames, fewer than observed_len={self.observed_len}")
        out = []
        for i in range(n_g):
            y = x.copy()
            if p > 0:
                basis = build_dct_basis(min(self.m_components, p), p)
                rng = np.random.default_rng(seed + i)
                g = self.sigma * rng.standard_normal((basis.m_components, x.shape[1]))
                y[self.observed_len:] += idct_decode(basis, g)
            out.append(y)
        return out

    def augment_many(self, motions, n_g, seeds):
        return [self.augment(m, n_g, s) for m, s in zip(motions, seeds)]


def perturbation_augment(motion, n_g: int, seed: int, sigma: float, observed_len: int = 30,
                         m_components: int = DIFFUSION_DCT_COMPONENTS) -> list:
    return PerturbationAugmenter(sigma, observed_len, m_components).augment(motion, n_g, seed)


# --------------------------------------------------------------------------
# persistence


def save_diffusion(path, model: DiffusionModel, meta: dict | None = None) -> None:
    from .checkpoint import save_checkpoint

    pred = model.predictor
    if not isinstance(pred, NoisePredictorParams):
        raise ContractError("only trained predictors can be saved")
    tensors = dict(pred.tensors)
    tensors["norm.center"] = model.center
    tensors["norm.scale"] = model.scale
    config = {
        "diffusion.steps": model.schedule.steps,
        "diffusion.dct_components": model.basis.m_components,
        "frame_length": model.frame_length,
        "joints": model.joints,
        "clip": model.clip,
        "predictor": pred.config.to_dict(),
    }
    save_checkpoint(path, "diffusion", tensors, config, meta)


def load_diffusion(path) -> DiffusionModel:
    from .checkpoint import load_checkpoint

    header, tensors = load_checkpoint(path, "diffusion")
    cfg = header["config"]
    center = tensors.pop("norm.center")
    scale = tensors.pop("norm.scale")
    pred = NoisePredictorParams(PredictorConfig(**cfg["predictor"]), tensors)
    return DiffusionModel(
        predictor=pred,
        schedule=build_cosine_schedule(cfg["diffusion.steps"]),
        basis=build_dct_basis(cfg["diffusion.dct_components"], cfg["frame_length"]),
        center=center,
        scale=scale,
        joints=int(cfg["joints"]),
        clip=cfg.get("clip"),
    )
