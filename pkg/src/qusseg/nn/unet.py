"""Attention-gated U-Net built from the layers in :mod:`qusseg.nn.layers`.

Parameter names
---------------
``match.w/b``                   1x1 grey-to-RGB matching layer
``enc{l}.conv{k}.w/b``          encoder level ``l`` (level ``depth`` is the bottleneck)
``enc{l}.bn{k}.gamma/beta``     batch-norm affine parameters
``dec{l}.up.w/b``               2x2 / stride-2 transposed convolution into level ``l``
``dec{l}.att.{theta,phi,psi}_{w,b}``  attention gate on the level-``l`` skip
``dec{l}.conv{k}.w/b``          decoder convolutions
``out.w/b``                     final 1x1 convolution followed by the sigmoid

Batch-norm running statistics live in a separate ``buffers`` dict under
``<bn name>.running_mean`` / ``.running_var``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from . import layers as L


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 4
    base_channels: int = 16
    input_hw: tuple[int, int] = (224, 224)
    use_attention: bool = True
    use_matching_layer: bool = True
    batchnorm: bool = True

    def __post_init__(self):
        if self.depth < 2:
            raise ConfigError("depth must be >= 2")
        if self.base_channels < 2:
            raise ConfigError("base_channels must be >= 2")
        h, w = self.input_hw
        step = 2 ** self.depth
        if h % step or w % step:
            raise ConfigError(f"input {h}x{w} is not divisible by 2**depth = {step}")

    def channels(self, level):
        return self.base_channels * 2 ** level


def _he(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def init_params(cfg: NetworkConfig, rng=None, dtype=np.float32):
    """He-normal convolution weights, zero biases, unit/zero batch-norm affine."""
    rng = rng if rng is not None else np.random.default_rng(0)
    params, buffers = {}, {}

    def conv(name, c_out, c_in, k):
        params[f"{name}.w"] = _he(rng, (c_out, c_in, k, k), c_in * k * k, dtype)
        params[f"{name}.b"] = np.zeros(c_out, dtype=dtype)

    def block(prefix, c_in, c_out):
        for k in range(2):
            conv(f"{prefix}.conv{k}", c_out, c_in if k == 0 else c_out, 3)
            if cfg.batchnorm:
                bn = f"{prefix}.bn{k}"
                params[f"{bn}.gamma"] = np.ones(c_out, dtype=dtype)
                params[f"{bn}.beta"] = np.zeros(c_out, dtype=dtype)
                buffers[f"{bn}.running_mean"] = np.zeros(c_out, dtype=dtype)
                buffers[f"{bn}.running_var"] = np.ones(c_out, dtype=dtype)

    c_in = 1
    if cfg.use_matching_layer:
        conv("match", 3, 1, 1)
        c_in = 3
    for level in range(cfg.depth + 1):
        block(f"enc{level}", c_in, cfg.channels(level))
        c_in = cfg.channels(level)
    for level in reversed(range(cfg.depth)):
        c_skip, c_low = cfg.channels(level), cfg.channels(level + 1)
        params[f"dec{level}.up.w"] = _he(rng, (c_low, c_skip, 2, 2), c_low, dtype)
        params[f"dec{level}.up.b"] = np.zeros(c_skip, dtype=dtype)
        if cfg.use_attention:
            c_int = max(1, c_skip // 2)
            att = f"dec{level}.att"
            params[f"{att}.theta_w"] = _he(rng, (c_int, c_skip, 1, 1), c_skip, dtype)
            params[f"{att}.theta_b"] = np.zeros(c_int, dtype=dtype)
            params[f"{att}.phi_w"] = _he(rng, (c_int, c_low, 1, 1), c_low, dtype)
            params[f"{att}.phi_b"] = np.zeros(c_int, dtype=dtype)
            params[f"{att}.psi_w"] = _he(rng, (1, c_int, 1, 1), c_int, dtype)
            params[f"{att}.psi_b"] = np.zeros(1, dtype=dtype)
        block(f"dec{level}", 2 * c_skip, c_skip)
    conv("out", 1, cfg.channels(0), 1)
    return params, buffers


class AttentionUNet:
    """Forward/backward driver holding config, parameters and batch-norm buffers.

    >>> net = AttentionUNet(NetworkConfig(depth=2, base_channels=4, input_hw=(16, 16)))
    >>> net.forward(np.zeros((1, 1, 16, 16), np.float32)).shape
    (1, 1, 16, 16)
    """

    def __init__(self, cfg: NetworkConfig, params=None, buffers=None, rng=None, dtype=np.float32):
        self.cfg = cfg
        if params is None:
            params, default_buffers = init_params(cfg, rng, dtype)
            buffers = default_buffers if buffers is None else buffers
        self.params = params
        self.buffers = buffers if buffers is not None else {}
        for name, value in params.items():
            if name.endswith(".gamma"):
                bn = name[:-len(".gamma")]
                self.buffers.setdefault(f"{bn}.running_mean", np.zeros_like(value))
                self.buffers.setdefault(f"{bn}.running_var", np.ones_like(value))
        self._tape = None
        self.alphas = {}

    # each tape entry is (kind, names, cache); backward replays it in reverse
    def _conv(self, x, name, stride=1, pad=0):
        out, cache = L.conv2d_forward(x, self.params[f"{name}.w"], self.params[f"{name}.b"], stride, pad)
        self._tape.append(("conv", name, cache))
        return out

    def _block(self, x, prefix, training):
        for k in range(2):
            x = self._conv(x, f"{prefix}.conv{k}", pad=1)
            if self.cfg.batchnorm:
                bn = f"{prefix}.bn{k}"
                running = {"mean": self.buffers[f"{bn}.running_mean"],
                           "var": self.buffers[f"{bn}.running_var"]}
                x, cache = L.batchnorm_forward(x, self.params[f"{bn}.gamma"], self.params[f"{bn}.beta"],
                                               running, training)
                if training:
                    self.buffers[f"{bn}.running_mean"] = running["mean"].astype(x.dtype)
                    self.buffers[f"{bn}.running_var"] = running["var"].astype(x.dtype)
                self._tape.append(("bn", bn, cache))
            x, mask = L.relu_forward(x)
            self._tape.append(("relu", None, mask))
        return x

    def forward(self, x, training=False):
        cfg = self.cfg
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1] != 1:
            raise ConfigError(f"expected input of shape (N, 1, H, W), got {x.shape}")
        step = 2 ** cfg.depth
        if x.shape[2] % step or x.shape[3] % step:
            raise ConfigError(f"input {x.shape[2]}x{x.shape[3]} not divisible by {step}")
        self._tape = []
        self.alphas = {}
        if cfg.use_matching_layer:
            x = self._conv(x, "match")
        skips = []
        for level in range(cfg.depth):
            x = self._block(x, f"enc{level}", training)
            skips.append(x)
            x, cache = L.maxpool2x2_forward(x)
            self._tape.append(("pool", level, cache))
        x = self._block(x, f"enc{cfg.depth}", training)
        for level in reversed(range(cfg.depth)):
            g = x
            up, cache = L.transposed_conv2d_forward(g, self.params[f"dec{level}.up.w"],
                                                    self.params[f"dec{level}.up.b"])
            self._tape.append(("up", f"dec{level}.up", cache))
            skip = skips[level]
            if cfg.use_attention:
                att = f"dec{level}.att"
                p = {k: self.params[f"{att}.{k}"] for k in
                     ("theta_w", "theta_b", "phi_w", "phi_b", "psi_w", "psi_b")}
                skip, alpha, cache = L.attention_gate_forward(skip, g, p)
                self.alphas[level] = alpha
                self._tape.append(("gate", att, cache))
            x = np.concatenate([up, skip], axis=1)
            self._tape.append(("concat", level, up.shape[1]))
            x = self._block(x, f"dec{level}", training)
        x = self._conv(x, "out")
        out, s = L.sigmoid_forward(x)
        self._tape.append(("sigmoid", None, s))
        return out

    def backward(self, dout):
        """Gradients of every parameter for the last :meth:`forward` call."""
        if self._tape is None:
            raise RuntimeError("backward called before forward")
        grads = {}
        skip_grads = {}
        # gradients flowing into g from the gate arrive before g's own producer is reached
        pending_g = {}
        d = dout
        for kind, name, cache in reversed(self._tape):
            if kind == "sigmoid":
                d = L.sigmoid_backward(d, cache)
            elif kind == "conv":
                d, grads[f"{name}.w"], grads[f"{name}.b"] = L.conv2d_backward(d, cache)
            elif kind == "bn":
                d, grads[f"{name}.gamma"], grads[f"{name}.beta"] = L.batchnorm_backward(d, cache)
            elif kind == "relu":
                d = L.relu_backward(d, cache)
            elif kind == "concat":
                level, c_up = name, cache
                skip_grads[level] = d[:, c_up:]
                d = d[:, :c_up]
            elif kind == "gate":
                level = int(name[3:name.index(".")])
                dskip, dg, g_grads = L.attention_gate_backward(skip_grads[level], cache)
                skip_grads[level] = dskip
                pending_g[level] = dg
                for k, v in g_grads.items():
                    grads[f"{name}.{k}"] = v
            elif kind == "up":
                level = int(name[3:name.index(".")])
                d, grads[f"{name}.w"], grads[f"{name}.b"] = L.transposed_conv2d_backward(d, cache)
                if level in pending_g:
                    d = d + pending_g.pop(level)
            elif kind == "pool":
                # the pool input is also the level's skip connection
                d = L.maxpool2x2_backward(d, cache) + skip_grads.pop(name)
        return grads


def unet_forward(x, cfg: NetworkConfig, params, buffers=None, training=False):
    """Functional forward pass; returns sigmoid probabilities with the input's spatial size."""
    net = AttentionUNet(cfg, params, buffers if buffers is not None else {})
    return net.forward(x, training)
