"""Residual graph-convolutional action encoder with hand-written backprop.

Every layer is ``act(A @ H @ W)`` with a trainable, unconstrained joint
adjacency ``A`` (J x J) and a weight ``W``; there are no biases. Layout:

    input layer   J x 3M -> J x F   (activated)
    blocks        two layers each, block input added to block output
    output layer  J x F  -> J x F   (linear)
    pooling       max over the feature axis -> z in R^J

DCT coefficients ``C`` (M x 3J) become node features by giving joint ``j``
the row ``[C[0, 3j:3j+3], C[1, 3j:3j+3], ...]``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CompatibilityError, ContractError

ACTIVATIONS = ("tanh", "relu", "identity")


@dataclass(frozen=True)
class EncoderConfig:
    joint_count: int = 24
    dct_components: int = 10
    hidden_dim: int = 128
    blocks: int = 4
    layers_per_block: int = 2
    activation: str = "tanh"
    frame_length: int = 60

    def __post_init__(self):
        if self.blocks < 1 or self.hidden_dim < 1 or self.layers_per_block < 1:
            raise ContractError("blocks, layers_per_block and hidden_dim must be >= 1")
        if self.joint_count < 1 or self.dct_components < 1:
            raise ContractError("joint_count and dct_components must be >= 1")
        if self.dct_components > self.frame_length:
            raise ContractError("dct_components cannot exceed frame_length")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"activation must be one of {ACTIVATIONS}")

    @property
    def input_dim(self) -> int:
        return 3 * self.dct_components

    def to_dict(self) -> dict:
        return asdict(self)


def layer_names(config: EncoderConfig) -> list:
    names = ["input"]
    for b in range(config.blocks):
        names += [f"block{b}.{k}" for k in range(config.layers_per_block)]
    names.append("output")
    return names


def param_shapes(config: EncoderConfig) -> dict:
    j, f = config.joint_count, config.hidden_dim
    shapes = {}
    for name in layer_names(config):
        fan_in = config.input_dim if name == "input" else f
        shapes[f"{name}.A"] = (j, j)
        shapes[f"{name}.W"] = (fan_in, f)
    return shapes


@dataclass(frozen=True)
class EncoderParams:
    config: EncoderConfig
    tensors: dict = field(repr=False)

    def __post_init__(self):
        expected = param_shapes(self.config)
        if list(self.tensors) != list(expected):
            raise ContractError(f"parameter names {list(self.tensors)} do not match config")
        for name, shape in expected.items():
            t = self.tensors[name]
            if t.shape != shape:
                raise ContractError(f"{name}: shape {t.shape}, expected {shape}")
            if not np.all(np.isfinite(t)):
                raise ContractError(f"{name}: non-finite entries")

    def replace(self, tensors: dict) -> "EncoderParams":
        return EncoderParams(self.config, {k: np.asarray(tensors[k], dtype=np.float64) for k in self.tensors})


def init_params(config: EncoderConfig, seed: int) -> EncoderParams:
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".A"):
            tensors[name] = np.eye(shape[0]) + rng.uniform(-1e-2, 1e-2, shape)
        else:
            bound = np.sqrt(3.0 / shape[0])
            tensors[name] = rng.uniform(-bound, bound, shape)
    return EncoderParams(config, tensors)


def node_features(coeffs: np.ndarray, joints: int) -> np.ndarray:
    """(B, M, 3J) coefficients -> (B, J, 3M) node features."""
    b, m, _ = coeffs.shape
    return coeffs.reshape(b, m, joints, 3).transpose(0, 2, 1, 3).reshape(b, joints, 3 * m)


def _as_batch(params: EncoderParams, coeffs) -> tuple[np.ndarray, bool]:
    c = np.asarray(coeffs, dtype=np.float64)
    single = c.ndim == 2
    if single:
        c = c[None]
    cfg = params.config
    want = (cfg.dct_components, 3 * cfg.joint_count)
    if c.ndim != 3 or c.shape[1:] != want:
        raise CompatibilityError(f"encoder expects coefficients of shape {want}, got {np.shape(coeffs)}")
    return c, single


def _act(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(kind: str, out: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return upstream * (1.0 - out * out)
    if kind == "relu":
        return upstream * (out > 0)
    return upstream


def _forward(params: EncoderParams, x: np.ndarray):
    cfg = params.config
    p = params.tensors
    tape = []

    def layer(name, h, activated):
        ah = p[f"{name}.A"] @ h
        out = ah @ p[f"{name}.W"]
        if activated:
            out = _act(cfg.activation, out)
        tape.append((name, h, ah, out, activated))
        return out

    h = layer("input", x, True)
    for b in range(cfg.blocks):
        u = h
        for k in range(cfg.layers_per_block):
            u = layer(f"block{b}.{k}", u, True)
        h = u + h
    y = layer("output", h, False)
    arg = np.argmax(y, axis=2)  # first index on ties
    z = np.take_along_axis(y, arg[..., None], axis=2)[..., 0]
    return z, (tape, arg, y.shape)


def forward(params: EncoderParams, coeffs) -> np.ndarray:
    """Embed one (M, 3J) coefficient matrix -> (J,), or a (B, M, 3J) stack -> (B, J)."""
    c, single = _as_batch(params, coeffs)
    z, _ = _forward(params, node_features(c, params.config.joint_count))
    return z[0] if single else z


def backward(params: EncoderParams, coeffs, grad_z) -> dict:
    """Gradients of ``sum(grad_z * forward(params, coeffs))``.

    Returns a dict keyed like ``params.tensors`` plus ``"coeffs"`` for the
    input. Batched inputs accumulate parameter gradients over the batch.
    """
    cfg = params.config
    c, single = _as_batch(params, coeffs)
    g = np.asarray(grad_z, dtype=np.float64)
    if single:
        g = g[None]
    if g.shape != (c.shape[0], cfg.joint_count):
        raise ContractError(f"grad_z shape {np.shape(grad_z)} does not match embedding shape")
    _, (tape, arg, yshape) = _forward(params, node_features(c, cfg.joint_count))
    p = params.tensors
    grads = {}

    dy = np.zeros(yshape)
    np.put_along_axis(dy, arg[..., None], g[..., None], axis=2)

    def layer_back(upstream):
        name, h, ah, out, activated = tape.pop()
        dpre = _act_grad(cfg.activation, out, upstream) if activated else upstream
        w, a = p[f"{name}.W"], p[f"{name}.A"]
        grads[f"{name}.W"] = np.einsum("bjf,bjg->fg", ah, dpre)
        grads[f"{name}.A"] = np.einsum("big,bjg->ij", dpre, h @ w)
        return a.T @ (dpre @ w.T)

    dh = layer_back(dy)
    for b in reversed(range(cfg.blocks)):
        du = dh
        for _ in range(cfg.layers_per_block):
            du = layer_back(du)
        dh = dh + du
    dx = layer_back(dh)

    m, j = cfg.dct_components, cfg.joint_count
    dc = dx.reshape(-1, j, m, 3).transpose(0, 2, 1, 3).reshape(-1, m, 3 * j)
    out = {name: grads[name] for name in p}
    out["coeffs"] = dc[0] if single else dc
    return out


def check_compatible(config: EncoderConfig, joints: int, frame_length: int) -> None:
    if config.joint_count != joints:
        raise CompatibilityError(f"encoder expects J={config.joint_count} joints, data has J={joints}")
    if config.frame_length != frame_length:
        raise CompatibilityError(
            f"encoder was built for H={config.frame_length} frames, data has H={frame_length}"
        )
