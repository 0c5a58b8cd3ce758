"""Tiny convolutional segmentation network with hand-written reverse-mode
gradients, plus the Adam optimizer it is trained with.

The network is a stack of zero-padded stride-1 convolutions (odd kernel
sizes), softplus nonlinearities on the hidden layers and a linear 1x1 head,
so an (H, W, in_ch) image maps to (H, W, num_classes) logits of the same
spatial size. Parameters live in one flat float64 vector; each forward pass
returns a tape of cached activations that the backward pass consumes exactly
once.

Softplus is used as the hidden nonlinearity (rather than a hard ReLU) so the
loss is smooth in the parameters everywhere, which keeps central-difference
gradient checks valid at tight tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigurationError, UsageError

DTYPE = np.float64


def softplus(z: np.ndarray) -> np.ndarray:
    # log(1 + e^z), written to avoid overflow for large |z|
    return np.logaddexp(0.0, z)


def softplus_grad(z: np.ndarray) -> np.ndarray:
    # d/dz log(1 + e^z) = sigmoid(z)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class ConvSpec:
    """One convolution layer: odd square kernel, optional softplus."""

    kernel: int
    in_ch: int
    out_ch: int
    activated: bool

    def __post_init__(self):
        if self.kernel % 2 != 1 or self.kernel < 1:
            raise ConfigurationError(f"kernel size must be odd and >= 1, got {self.kernel}")
        if self.in_ch < 1 or self.out_ch < 1:
            raise ConfigurationError("channel counts must be >= 1")

    @property
    def weight_count(self) -> int:
        return self.kernel * self.kernel * self.in_ch * self.out_ch

    @property
    def param_count(self) -> int:
        return self.weight_count + self.out_ch


def standard_layers(in_ch: int = 3, hidden=(16, 16), num_classes: int = 5):
    """The stock architecture: two 3x3 softplus convs and a 1x1 linear head."""
    specs = []
    prev = in_ch
    for width in hidden:
        specs.append(ConvSpec(3, prev, width, activated=True))
        prev = width
    specs.append(ConvSpec(1, prev, num_classes, activated=False))
    return specs


@dataclass
class GradientTape:
    """Activations cached by one forward pass; consumed once by backward."""

    inputs: list
    preacts: list
    version: int
    used: bool = False


class SegNet:
    """Parameter container plus layer topology for the segmentation CNN."""

    def __init__(self, layers, params: np.ndarray | None = None, seed: int | None = None):
        self.layers = list(layers)
        offsets = []
        total = 0
        for spec in self.layers:
            offsets.append(total)
            total += spec.param_count
        self.param_layout = offsets
        self.n_params = total
        self.version = 0
        if params is not None:
            params = np.asarray(params, dtype=DTYPE)
            if params.shape != (total,):
                raise ConfigurationError(
                    f"expected {total} parameters, got shape {params.shape}"
                )
            self.params = params.copy()
        else:
            self.params = self._init_params(seed)

    @property
    def in_ch(self) -> int:
        return self.layers[0].in_ch

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_ch

    def _init_params(self, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        params = np.zeros(self.n_params, dtype=DTYPE)
        for spec, off in zip(self.layers, self.param_layout):
            fan_in = spec.kernel * spec.kernel * spec.in_ch
            std = np.sqrt(2.0 / fan_in)
            params[off:off + spec.weight_count] = rng.normal(0.0, std, spec.weight_count)
            # biases stay zero
        return params

    def layer_arrays(self, index: int, params: np.ndarray | None = None):
        """View of layer `index` weights (kh,kw,cin,cout) and bias (cout,)."""
        p = self.params if params is None else params
        spec = self.layers[index]
        off = self.param_layout[index]
        w = p[off:off + spec.weight_count].reshape(
            spec.kernel, spec.kernel, spec.in_ch, spec.out_ch
        )
        b = p[off + spec.weight_count:off + spec.param_count]
        return w, b

    def set_params(self, params: np.ndarray) -> None:
        params = np.asarray(params, dtype=DTYPE)
        if params.shape != (self.n_params,):
            raise UsageError(f"parameter vector must have length {self.n_params}")
        self.params = params.copy()
        self.version += 1

    def clone(self) -> "SegNet":
        return SegNet(self.layers, params=self.params)


def forward(net: SegNet, image: np.ndarray):
    """Run the network on an (H, W, in_ch) image.

    Returns (logits, tape) where logits is (H, W, num_classes) and tape holds
    the per-layer activations needed by :func:`backward`.
    """
    image = np.ascontiguousarray(image, dtype=DTYPE)
    if image.ndim != 3 or image.shape[2] != net.in_ch:
        raise ConfigurationError(
            f"expected (H, W, {net.in_ch}) image, got shape {image.shape}"
        )
    x = image
    inputs, preacts = [], []
    for i, spec in enumerate(net.layers):
        w, b = net.layer_arrays(i)
        z = kernels.conv2d_forward(x, np.ascontiguousarray(w), np.ascontiguousarray(b))
        inputs.append(x)
        preacts.append(z)
        x = softplus(z) if spec.activated else z
    tape = GradientTape(inputs=inputs, preacts=preacts, version=net.version)
    return x, tape


def backward(net: SegNet, tape: GradientTape, dloss_dlogits: np.ndarray) -> np.ndarray:
    """Reverse-mode pass: logit cotangent -> flat parameter gradient."""
    if tape.used:
        raise UsageError("gradient tape already consumed")
    if tape.version != net.version:
        raise UsageError("gradient tape is stale (parameters changed since forward)")
    tape.used = True
    g = np.ascontiguousarray(dloss_dlogits, dtype=DTYPE)
    if g.shape != tape.preacts[-1].shape:
        raise UsageError(
            f"cotangent shape {g.shape} does not match logits {tape.preacts[-1].shape}"
        )
    grad = np.zeros(net.n_params, dtype=DTYPE)
    for i in range(len(net.layers) - 1, -1, -1):
        spec = net.layers[i]
        if spec.activated:
            g = g * softplus_grad(tape.preacts[i])
        w, _ = net.layer_arrays(i)
        gx, gw, gb = kernels.conv2d_backward(
            tape.inputs[i], np.ascontiguousarray(w), np.ascontiguousarray(g)
        )
        off = net.param_layout[i]
        grad[off:off + spec.weight_count] = gw.ravel()
        grad[off + spec.weight_count:off + spec.param_count] = gb
        g = gx
    return grad


def softmax_pixels(logits: np.ndarray) -> np.ndarray:
    """Per-pixel softmax over the channel axis, max-subtracted for stability."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class AdamState:
    """First/second moment accumulators for Adam with bias correction."""

    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 6.0e-5 / 8.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n_params: int, lr: float = 6.0e-5 / 8.0, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(m=np.zeros(n_params, dtype=DTYPE), v=np.zeros(n_params, dtype=DTYPE),
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState):
    """One Adam update. Returns the new parameter vector; the state is
    advanced in place (step_count += 1)."""
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise UsageError("params, grad and optimizer state must have equal lengths")
    state.step_count += 1
    t = state.step_count
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** t)
    v_hat = state.v / (1.0 - state.beta2 ** t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


class PretrainDivergence(RuntimeError):
    """Raised when source training produces a non-finite loss."""


def pretrain(net: SegNet, scenes, epochs: int, lr: float, seed: int = 0):
    """Fit the network on labeled source scenes with dense cross-entropy.

    One Adam step per scene, scenes shuffled each epoch. Returns the list of
    per-epoch mean training losses; the net is updated in place.
    """
    from . import losses  # local import; losses has no dependency on this module

    if epochs == 0:
        return []
    state = AdamState.fresh(net.n_params, lr=lr)
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(scenes))
        epoch_losses = np.empty(len(scenes), dtype=DTYPE)
        for pos, idx in enumerate(order):
            scene = scenes[idx]
            logits, tape = forward(net, scene.image)
            probs = softmax_pixels(logits)
            loss, dlogits = losses.ce_dense_with_grad(probs, scene.labels)
            if not np.isfinite(loss):
                raise PretrainDivergence(
                    f"non-finite loss {loss} at epoch {epoch}, scene {idx}"
                )
            grad = backward(net, tape, dlogits)
            net.set_params(adam_step(net.params, grad, state))
            epoch_losses[pos] = loss
        history.append(float(epoch_losses.mean()))
    return history
