"""Minimal dense-tensor compute engine with reverse-mode differentiation.

Covers exactly the operations the network needs: dilated causal 1-D
convolution (1x1 included), ELU, dropout, weight normalization,
element-wise add, channel concatenation, reductions, and Adam. Arrays are
float64 throughout so analytic gradients can be checked against central
finite differences at tight tolerances.

The compute graph is recorded implicitly: every operation links its output
tensor to its parents together with a closure that maps the output
gradient to parent gradients. ``Tensor.backward`` walks the recorded graph
in reverse topological order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "Conv1dLayer",
    "AdamState",
    "causal_dilated_conv",
    "receptive_field_single",
    "elu",
    "dropout",
    "weight_norm_materialize",
    "add",
    "concat_channels",
    "tensor_sum",
    "mse_loss",
    "adam_init",
    "adam_step",
]


class Tensor:
    """A dense float64 array with an optional gradient buffer.

    Shapes follow the [batch, channels, time] convention for signals;
    parameters use whatever shape the layer defines.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate d(self)/d(parameter) into every reachable ``grad``.

        The loss must be scalar and must have been produced by recorded
        operations; calling this on a leaf (no forward pass) is an error.
        """
        if self._backward_fn is None:
            raise ValueError("backward before forward: tensor has no recorded graph")
        if self.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad or parent._parents:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)


def _record(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _accumulate(tensor: Tensor, grad: np.ndarray):
    if tensor.grad is None:
        tensor.grad = grad.copy()
    else:
        tensor.grad += grad


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --- layers -----------------------------------------------------------------


@dataclass
class Conv1dLayer:
    """Weight-normalized dilated causal convolution parameters.

    The effective kernel is w = g * v / ||v|| per output channel; g and v
    are the trainable parameters. Left zero-padding of (R-1)*L keeps the
    output the same length as the input and strictly causal.
    """

    kernel_direction_v: Tensor  # [out_ch, in_ch, R]
    gain_g: Tensor              # [out_ch]
    bias: Tensor                # [out_ch]
    kernel_size: int
    dilation: int = 1

    def __post_init__(self):
        if self.kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        if self.dilation < 1:
            raise ValueError("dilation must be >= 1")
        o, _, r = self.kernel_direction_v.shape
        if r != self.kernel_size:
            raise ValueError("kernel_direction_v does not match kernel_size")
        if self.gain_g.shape != (o,) or self.bias.shape != (o,):
            raise ValueError("gain/bias shape mismatch")

    @property
    def in_channels(self) -> int:
        return self.kernel_direction_v.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernel_direction_v.shape[0]

    def parameters(self) -> list[Tensor]:
        return [self.kernel_direction_v, self.gain_g, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        return causal_dilated_conv(x, self)


def conv1d_layer(in_channels: int, out_channels: int, kernel_size: int,
                 dilation: int, rng: np.random.Generator) -> Conv1dLayer:
    """He-uniform initialized layer; the gain starts at ||v|| so the
    effective kernel equals the raw draw."""
    if kernel_size < 1:
        raise ValueError("kernel_size must be >= 1")
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    bound = np.sqrt(6.0 / (in_channels * kernel_size))
    v = rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel_size))
    g = np.sqrt((v ** 2).sum(axis=(1, 2)))
    return Conv1dLayer(
        kernel_direction_v=Tensor(v, requires_grad=True),
        gain_g=Tensor(g, requires_grad=True),
        bias=Tensor(np.zeros(out_channels), requires_grad=True),
        kernel_size=kernel_size,
        dilation=dilation,
    )


def receptive_field_single(kernel_size: int, dilation: int) -> int:
    """Input span one dilated kernel can see: R + (R-1)(L-1)."""
    if kernel_size < 1 or dilation < 1:
        raise ValueError("kernel_size and dilation must be >= 1")
    return kernel_size + (kernel_size - 1) * (dilation - 1)


# --- operations ---------------------------------------------------------------


def weight_norm_materialize(v, g):
    """w = g * v / ||v||, norm taken over all taps of one output channel.

    Accepts a plain 1-D vector with scalar gain, or [out_ch, ...] arrays
    with one gain per output channel. Differentiable when given Tensors.
    """
    if isinstance(v, Tensor) or isinstance(g, Tensor):
        vt, gt = as_tensor(v), as_tensor(g)
        return _weight_norm_op(vt, gt)
    varr = np.asarray(v, dtype=np.float64)
    if varr.ndim == 1:
        norm = np.linalg.norm(varr)
        if norm == 0.0:
            raise ValueError("degenerate direction")
        return float(g) * varr / norm
    norms = np.sqrt((varr ** 2).sum(axis=tuple(range(1, varr.ndim))))
    if np.any(norms == 0.0):
        raise ValueError("degenerate direction")
    shape = (-1,) + (1,) * (varr.ndim - 1)
    return varr * (np.asarray(g, dtype=np.float64) / norms).reshape(shape)


def _weight_norm_op(v: Tensor, g: Tensor) -> Tensor:
    axes = tuple(range(1, v.data.ndim))
    norms = np.sqrt((v.data ** 2).sum(axis=axes))
    if np.any(norms == 0.0):
        raise ValueError("degenerate direction")
    shape = (-1,) + (1,) * (v.data.ndim - 1)
    scale = (g.data / norms).reshape(shape)
    w = v.data * scale

    def backward_fn(grad):
        unit = v.data / norms.reshape(shape)
        if g.requires_grad:
            _accumulate(g, (grad * unit).sum(axis=axes))
        if v.requires_grad:
            inner = (grad * v.data).sum(axis=axes).reshape(shape)
            gv = scale * grad - (g.data.reshape(shape) * inner / (norms.reshape(shape) ** 3)) * v.data
            _accumulate(v, gv)

    return _record(w, (v, g), backward_fn)


def causal_dilated_conv(x: Tensor, layer: Conv1dLayer) -> Tensor:
    """out[b,o,p] = bias[o] + sum_{c,i} w[o,c,i] x[b,c,p - L*i].

    Out-of-range inputs count as zero (left padding by (R-1)*L), so the
    output has the input's length and depends only on past samples.
    """
    if x.data.ndim != 3:
        raise ValueError("input must be [batch, channels, time]")
    if x.data.shape[1] != layer.in_channels:
        raise ValueError(
            f"channel mismatch: input has {x.data.shape[1]}, layer expects {layer.in_channels}"
        )
    w = _weight_norm_op(layer.kernel_direction_v, layer.gain_g)
    return _conv_op(x, w, layer.bias, layer.dilation)


def _conv_op(x: Tensor, w: Tensor, bias: Tensor, dilation: int) -> Tensor:
    batch, in_ch, time = x.data.shape
    out_ch, _, taps = w.data.shape
    pad = (taps - 1) * dilation
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, 0)))
    cols = np.stack(
        [xp[:, :, pad - dilation * i : pad - dilation * i + time] for i in range(taps)],
        axis=2,
    )  # [batch, in_ch, taps, time]
    # single large GEMM: [out_ch, in_ch*taps] x [in_ch*taps, batch*time]
    out = np.tensordot(w.data, cols, axes=([1, 2], [1, 2])).transpose(1, 0, 2)
    out += bias.data[None, :, None]

    def backward_fn(grad):
        if bias.requires_grad:
            _accumulate(bias, grad.sum(axis=(0, 2)))
        if w.requires_grad or w._parents:
            gw = np.tensordot(grad, cols, axes=([0, 2], [0, 3]))  # [out_ch, in_ch, taps]
            _accumulate(w, gw)
        if x.requires_grad or x._parents:
            gxp = np.zeros_like(xp)
            for i in range(taps):
                sl = slice(pad - dilation * i, pad - dilation * i + time)
                gxp[:, :, sl] += np.tensordot(grad, w.data[:, :, i], axes=([1], [0])).transpose(0, 2, 1)
            _accumulate(x, gxp[:, :, pad:])

    return _record(out, (x, w, bias), backward_fn)


def elu(x: Tensor) -> Tensor:
    """x for x > 0, exp(x) - 1 otherwise (alpha = 1)."""
    x = as_tensor(x)
    positive = x.data > 0
    out = np.where(positive, x.data, np.expm1(x.data))

    def backward_fn(grad):
        if x.requires_grad or x._parents:
            _accumulate(x, grad * np.where(positive, 1.0, out + 1.0))

    return _record(out, (x,), backward_fn)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | int | None = None) -> Tensor:
    """Zero each element with probability ``rate`` and rescale survivors by
    1/(1-rate) during training; identity at inference. Deterministic for a
    given seed or generator state."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    x = as_tensor(x)
    if not training or rate == 0.0:
        def backward_identity(grad):
            if x.requires_grad or x._parents:
                _accumulate(x, grad)
        return _record(x.data.copy(), (x,), backward_identity)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    scale = 1.0 / (1.0 - rate)
    mask = (rng.random(x.data.shape) >= rate) * scale
    out = x.data * mask

    def backward_fn(grad):
        if x.requires_grad or x._parents:
            _accumulate(x, grad * mask)

    return _record(out, (x,), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ValueError("shape mismatch in add")
    out = a.data + b.data

    def backward_fn(grad):
        if a.requires_grad or a._parents:
            _accumulate(a, grad)
        if b.requires_grad or b._parents:
            _accumulate(b, grad)

    return _record(out, (a, b), backward_fn)


def concat_channels(tensors: list[Tensor]) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[1] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=1)

    def backward_fn(grad):
        offset = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad or t._parents:
                _accumulate(t, grad[:, offset : offset + size])
            offset += size

    return _record(out, tuple(tensors), backward_fn)


def tensor_sum(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.data.sum())

    def backward_fn(grad):
        if x.requires_grad or x._parents:
            _accumulate(x, np.broadcast_to(grad, x.data.shape).astype(np.float64))

    return _record(out, (x,), backward_fn)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean over all elements of (pred - target)^2; gradient 2(pred-target)/N."""
    pred = as_tensor(pred)
    target_data = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.data.shape != target_data.shape:
        raise ValueError("shape mismatch in mse_loss")
    diff = pred.data - target_data
    out = np.asarray(np.mean(diff ** 2))

    def backward_fn(grad):
        if pred.requires_grad or pred._parents:
            _accumulate(pred, grad * 2.0 * diff / diff.size)

    return _record(out, (pred,), backward_fn)


# --- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter moment buffers plus the shared step counter."""

    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params: list[Tensor], beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8) -> AdamState:
    return AdamState(
        first_moment=[np.zeros_like(p.data) for p in params],
        second_moment=[np.zeros_like(p.data) for p in params],
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState, lr: float):
    """Standard bias-corrected Adam update, in place."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ValueError("parameter/gradient/state length mismatch")
    state.step_count += 1
    t = state.step_count
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ValueError("gradient shape mismatch")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
