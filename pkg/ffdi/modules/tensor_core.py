"""
FFDI - Tensor Core Module
Dense N x C x H x W tensors with reverse-mode differentiation for the fixed
operation set the FFDI network needs. No broadcasting beyond the explicit
channel gate, no GPU.
"""

import contextlib
import itertools
import math
import threading

import numpy as np

from .errors import DataError, GraphError, ShapeError
from .logger import get_logger

logger = get_logger(__name__)

DTYPES = {"single": np.float32, "wide": np.float64}

_ids = itertools.count(1)
_state = threading.local()


def resolve_dtype(precision):
    try:
        return DTYPES[precision]
    except KeyError:
        raise ShapeError(f"unknown precision {precision!r}; expected one of {sorted(DTYPES)}")


class Node:
    """One executed operation: op name, input ids, output id and the saved context."""

    __slots__ = ("op", "function", "inputs", "output")

    def __init__(self, function, inputs, output):
        self.op = type(function).__name__
        self.function = function
        self.inputs = inputs
        self.output = output

    def describe(self):
        return {
            "op": self.op,
            "inputs": [t.id for t in self.inputs],
            "output": self.output.id,
        }


class Graph:
    """
    Ordered tape of recorded operations. Nodes are appended as they execute,
    so every input precedes its consumer. Cleared after each backward pass.
    """

    def __init__(self):
        self.nodes = []
        self.generation = 0

    def record(self, node):
        self.nodes.append(node)
        return len(self.nodes) - 1

    def clear(self):
        self.nodes = []
        self.generation += 1

    def describe(self):
        return [node.describe() for node in self.nodes]


def current_graph():
    graph = getattr(_state, "graph", None)
    if graph is None:
        graph = Graph()
        _state.graph = graph
    return graph


def grad_enabled():
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    """Dense array with optional gradient accumulator."""

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        array = np.asarray(data)
        if dtype is not None:
            array = array.astype(dtype, copy=False)
        elif not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float32)
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self.id = next(_ids)
        self._tape_ref = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._tape_ref is None

    def item(self):
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    def sum(self):
        return Sum.apply(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def __add__(self, other):
        if isinstance(other, Tensor):
            return Add.apply(self, other)
        return Shift.apply(self, value=float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return Sub.apply(self, other)
        return Shift.apply(self, value=-float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return Mul.apply(self, other)
        return Scale.apply(self, factor=float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Scale.apply(self, factor=-1.0)

    def __repr__(self):
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"


class Parameter(Tensor):
    """Learnable leaf; grad is always allocated so untouched params read as exact zeros."""

    def __init__(self, data, dtype=None, name=None):
        super().__init__(data, requires_grad=True, dtype=dtype, name=name)
        self.data = np.array(self.data, copy=True)
        self.zero_grad()


class Function:
    """
    Base class for differentiable operations. `forward` works on raw arrays and
    may stash what `backward` needs on `self`; `backward` returns one gradient
    (or None) per tensor input.
    """

    def forward(self, *arrays, **kwargs):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    @classmethod
    def apply(cls, *tensors, **kwargs):
        function = cls()
        out = function.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = grad_enabled() and any(t.requires_grad for t in tensors)
        result = Tensor(out, requires_grad=requires_grad)
        if requires_grad:
            graph = current_graph()
            index = graph.record(Node(function, tensors, result))
            result._tape_ref = (graph, graph.generation, index)
        return result


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


class Add(Function):
    def forward(self, a, b):
        _check_same_shape(a, b, "add")
        return a + b

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    def forward(self, a, b):
        _check_same_shape(a, b, "sub")
        return a - b

    def backward(self, grad):
        return grad, -grad


class Mul(Function):
    def forward(self, a, b):
        _check_same_shape(a, b, "mul")
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


class Scale(Function):
    def forward(self, a, factor):
        self.factor = factor
        return a * a.dtype.type(factor)

    def backward(self, grad):
        return (grad * grad.dtype.type(self.factor),)


class Shift(Function):
    def forward(self, a, value):
        return a + a.dtype.type(value)

    def backward(self, grad):
        return (grad,)


class Sum(Function):
    def forward(self, a):
        self.shape = a.shape
        return np.asarray(a.sum(), dtype=a.dtype)

    def backward(self, grad):
        return (np.full(self.shape, grad, dtype=grad.dtype),)


class Reshape(Function):
    def forward(self, a, shape):
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class ReLU(Function):
    def forward(self, a):
        self.mask = a > 0
        return a * self.mask

    def backward(self, grad):
        return (grad * self.mask,)


class Sigmoid(Function):
    def forward(self, a):
        out = np.empty_like(a)
        positive = a >= 0
        out[positive] = 1.0 / (1.0 + np.exp(-a[positive]))
        exp_a = np.exp(a[~positive])
        out[~positive] = exp_a / (1.0 + exp_a)
        self.out = out
        return out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class ChannelGate(Function):
    """Multiply an N x 1 x H x W mask into every channel of an N x C x H x W map."""

    def forward(self, mask, x):
        if mask.ndim != 4 or x.ndim != 4 or mask.shape[1] != 1:
            raise ShapeError(f"channel_gate expects N x 1 x H x W mask, got {mask.shape}")
        if (mask.shape[0], mask.shape[2], mask.shape[3]) != (x.shape[0], x.shape[2], x.shape[3]):
            raise ShapeError(f"channel_gate: mask {mask.shape} does not cover {x.shape}")
        self.mask, self.x = mask, x
        return mask * x

    def backward(self, grad):
        return (grad * self.x).sum(axis=1, keepdims=True), grad * self.mask


class ConcatChannels(Function):
    def forward(self, a, b):
        if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
            raise ShapeError(f"concat: incompatible shapes {a.shape} and {b.shape}")
        self.split = a.shape[1]
        return np.concatenate([a, b], axis=1)

    def backward(self, grad):
        return grad[:, : self.split], grad[:, self.split :]


def _conv_output_size(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _patches(xpad, k, stride, out_h, out_w):
    """Read-only N x C x k x k x out_h x out_w view of sliding windows."""
    n, c = xpad.shape[:2]
    s_n, s_c, s_h, s_w = xpad.strides
    return np.lib.stride_tricks.as_strided(
        xpad,
        shape=(n, c, k, k, out_h, out_w),
        strides=(s_n, s_c, s_h, s_w, stride * s_h, stride * s_w),
        writeable=False,
    )


def _scatter_patches(cols, full_shape, k, stride):
    """Adjoint of _patches: sum window contributions back into a padded grid."""
    out = np.zeros(full_shape, dtype=cols.dtype)
    out_h, out_w = cols.shape[4], cols.shape[5]
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += cols[:, :, i, j]
    return out


class Conv2d(Function):
    def forward(self, x, weight, bias, stride, padding):
        if x.ndim != 4 or weight.ndim != 4:
            raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape}, {weight.shape}")
        c_out, c_in, k, k2 = weight.shape
        if k != k2:
            raise ShapeError(f"conv2d: square kernels only, got {k}x{k2}")
        if x.shape[1] != c_in:
            raise ShapeError(f"conv2d: input has {x.shape[1]} channels, weight expects {c_in}")
        if bias.shape != (c_out,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
        if stride < 1 or padding < 0:
            raise ShapeError(f"conv2d: invalid stride {stride} / padding {padding}")
        h, w = x.shape[2:]
        if k > h + 2 * padding or k > w + 2 * padding:
            raise ShapeError(f"conv2d: kernel {k} larger than padded input {h}x{w}+{padding}")
        out_h = _conv_output_size(h, k, stride, padding)
        out_w = _conv_output_size(w, k, stride, padding)
        xpad = _pad(x, padding)
        cols = _patches(xpad, k, stride, out_h, out_w)
        out = np.tensordot(cols, weight, axes=([1, 2, 3], [1, 2, 3])).transpose(0, 3, 1, 2)
        self.cols, self.weight = cols, weight
        self.xpad_shape, self.x_shape = xpad.shape, x.shape
        self.k, self.stride, self.padding = k, stride, padding
        return np.ascontiguousarray(out + bias.reshape(1, -1, 1, 1))

    def backward(self, grad):
        grad_weight = np.tensordot(grad, self.cols, axes=([0, 2, 3], [0, 4, 5]))
        grad_bias = grad.sum(axis=(0, 2, 3))
        grad_cols = np.tensordot(grad, self.weight, axes=([1], [0])).transpose(0, 3, 4, 5, 1, 2)
        grad_xpad = _scatter_patches(grad_cols, self.xpad_shape, self.k, self.stride)
        p = self.padding
        h, w = self.x_shape[2:]
        grad_x = grad_xpad[:, :, p : p + h, p : p + w]
        return grad_x, grad_weight, grad_bias


class ConvTranspose2d(Function):
    """Weight layout C_in x C_out x k x k; adjoint of Conv2d with the same array."""

    def forward(self, x, weight, bias, stride, padding):
        if x.ndim != 4 or weight.ndim != 4:
            raise ShapeError(f"transposed_conv2d expects 4-D input and weight, got {x.shape}, {weight.shape}")
        c_in, c_out, k, k2 = weight.shape
        if k != k2:
            raise ShapeError(f"transposed_conv2d: square kernels only, got {k}x{k2}")
        if x.shape[1] != c_in:
            raise ShapeError(f"transposed_conv2d: input has {x.shape[1]} channels, weight expects {c_in}")
        if bias.shape != (c_out,):
            raise ShapeError(f"transposed_conv2d: bias shape {bias.shape} != ({c_out},)")
        if stride < 1 or padding < 0:
            raise ShapeError(f"transposed_conv2d: invalid stride {stride} / padding {padding}")
        n, _, h, w = x.shape
        full_h, full_w = (h - 1) * stride + k, (w - 1) * stride + k
        if full_h - 2 * padding < 1 or full_w - 2 * padding < 1:
            raise ShapeError(f"transposed_conv2d: padding {padding} removes the whole output")
        cols = np.tensordot(x, weight, axes=([1], [0])).transpose(0, 3, 4, 5, 1, 2)
        full = _scatter_patches(cols, (n, c_out, full_h, full_w), k, stride)
        p = padding
        out = full[:, :, p : full_h - p, p : full_w - p]
        self.x, self.weight = x, weight
        self.k, self.stride, self.padding = k, stride, padding
        return np.ascontiguousarray(out + bias.reshape(1, -1, 1, 1))

    def backward(self, grad):
        h, w = self.x.shape[2:]
        gpad = _pad(grad, self.padding)
        patches = _patches(np.ascontiguousarray(gpad), self.k, self.stride, h, w)
        grad_x = np.tensordot(patches, self.weight, axes=([1, 2, 3], [1, 2, 3])).transpose(0, 3, 1, 2)
        grad_weight = np.tensordot(self.x, patches, axes=([0, 2, 3], [0, 4, 5]))
        grad_bias = grad.sum(axis=(0, 2, 3))
        return np.ascontiguousarray(grad_x), grad_weight, grad_bias


class ChannelPool(Function):
    """Plane 0: channel mean. Plane 1: channel max (first index wins on ties)."""

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] < 1:
            raise ShapeError(f"channel_pool expects N x C x H x W with C >= 1, got {x.shape}")
        self.channels = x.shape[1]
        self.argmax = np.argmax(x, axis=1)[:, None]
        mean = x.mean(axis=1, keepdims=True)
        peak = np.take_along_axis(x, self.argmax, axis=1)
        self.shape = x.shape
        return np.concatenate([mean, peak], axis=1)

    def backward(self, grad):
        grad_x = np.repeat(grad[:, :1] / self.channels, self.channels, axis=1)
        np.put_along_axis(
            grad_x,
            self.argmax,
            np.take_along_axis(grad_x, self.argmax, axis=1) + grad[:, 1:2],
            axis=1,
        )
        return (grad_x,)


class GlobalAvgPool(Function):
    def forward(self, x):
        if x.ndim != 4 or x.shape[2] * x.shape[3] < 1:
            raise ShapeError(f"global_avg_pool expects non-empty N x C x H x W, got {x.shape}")
        self.shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        h, w = self.shape[2:]
        spread = grad[:, :, None, None] / grad.dtype.type(h * w)
        return (np.broadcast_to(spread, self.shape).copy(),)


class Linear(Function):
    """Weight layout out x in."""

    def forward(self, x, weight, bias):
        if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
            raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
        self.x, self.weight = x, weight
        return x @ weight.T + bias

    def backward(self, grad):
        return grad @ self.weight, grad.T @ self.x, grad.sum(axis=0)


class OuterProduct(Function):
    """Row-wise outer product of N x C and N x D, flattened to N x (C*D)."""

    def forward(self, u, v):
        if u.ndim != 2 or v.ndim != 2 or u.shape[0] != v.shape[0]:
            raise ShapeError(f"outer_product: incompatible shapes {u.shape}, {v.shape}")
        self.u, self.v = u, v
        return np.einsum("nc,nd->ncd", u, v).reshape(u.shape[0], -1)

    def backward(self, grad):
        grid = grad.reshape(self.u.shape[0], self.u.shape[1], self.v.shape[1])
        return np.einsum("ncd,nd->nc", grid, self.v), np.einsum("ncd,nc->nd", grid, self.u)


class SignedSqrt(Function):
    def forward(self, x, eps):
        self.root = np.sqrt(np.abs(x) + x.dtype.type(eps))
        return np.sign(x) * self.root

    def backward(self, grad):
        return (grad * 0.5 / self.root,)


class RowL2Normalize(Function):
    def forward(self, x, eps):
        norm = np.sqrt((x * x).sum(axis=1, keepdims=True))
        self.norm = np.maximum(norm, x.dtype.type(eps))
        self.out = x / self.norm
        return self.out

    def backward(self, grad):
        dot = (grad * self.out).sum(axis=1, keepdims=True)
        return ((grad - self.out * dot) / self.norm,)


class CrossEntropy(Function):
    def forward(self, logits, labels):
        if logits.ndim != 2:
            raise ShapeError(f"cross_entropy expects N x classes logits, got {logits.shape}")
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != logits.shape[0]:
            raise ShapeError(f"cross_entropy: {labels.shape[0]} labels for {logits.shape[0]} rows")
        if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
            raise DataError(f"cross_entropy: label outside [0, {logits.shape[1]})")
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_norm
        rows = np.arange(labels.shape[0])
        self.probs = np.exp(log_probs)
        self.labels, self.rows = labels, rows
        return np.asarray(-log_probs[rows, labels].mean(), dtype=logits.dtype)

    def backward(self, grad):
        out = self.probs.copy()
        out[self.rows, self.labels] -= 1.0
        return (out * (grad / self.labels.shape[0]),)


class SquaredError(Function):
    """Per-sample summed squared difference averaged over samples ("sum"), or the plain element mean ("mean")."""

    def forward(self, a, b, reduction):
        _check_same_shape(a, b, "mse")
        self.diff = a - b
        per_sample = self.diff.reshape(a.shape[0], -1)
        if reduction == "sum":
            self.denominator = a.shape[0]
        elif reduction == "mean":
            self.denominator = per_sample.size
        else:
            raise ShapeError(f"mse: unknown reduction {reduction!r}")
        return np.asarray((per_sample * per_sample).sum() / self.denominator, dtype=a.dtype)

    def backward(self, grad):
        g = self.diff * (2.0 * grad / self.denominator)
        return g, -g


def conv2d(x, weight, bias, stride=1, padding=0):
    return Conv2d.apply(x, weight, bias, stride=int(stride), padding=int(padding))


def transposed_conv2d(x, weight, bias, stride=1, padding=0):
    return ConvTranspose2d.apply(x, weight, bias, stride=int(stride), padding=int(padding))


def channel_pool(x):
    return ChannelPool.apply(x)


def global_avg_pool(x):
    return GlobalAvgPool.apply(x)


def linear(x, weight, bias):
    return Linear.apply(x, weight, bias)


def relu(x):
    return ReLU.apply(x)


def sigmoid(x):
    return Sigmoid.apply(x)


def channel_gate(mask, x):
    return ChannelGate.apply(mask, x)


def concat_channels(a, b):
    return ConcatChannels.apply(a, b)


def outer_product(u, v):
    return OuterProduct.apply(u, v)


def signed_sqrt(x, eps=1e-12):
    return SignedSqrt.apply(x, eps=eps)


def l2_normalize(x, eps=1e-12):
    return RowL2Normalize.apply(x, eps=eps)


def cross_entropy(logits, labels):
    return CrossEntropy.apply(logits, labels=labels)


def mse(a, b, reduction="sum"):
    return SquaredError.apply(a, b, reduction=reduction)


def stop_gradient(x):
    return x.detach()


def backward(loss):
    """
    Propagate dLoss into every requires_grad tensor reachable from `loss`.
    Leaf gradients accumulate additively; the tape is cleared afterwards.
    """
    if loss.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    if loss._tape_ref is None:
        if loss.requires_grad:
            seed = np.ones_like(loss.data)
            loss.grad = seed if loss.grad is None else loss.grad + seed
            return
        raise GraphError("loss was not produced by a recorded forward pass")
    graph, generation, index = loss._tape_ref
    if graph.generation != generation:
        raise GraphError("backward already ran for this forward pass; run a new forward first")

    pending = {loss.id: np.ones_like(loss.data)}
    for node in reversed(graph.nodes[: index + 1]):
        grad = pending.pop(node.output.id, None)
        if grad is None:
            continue
        node.output.grad = grad
        input_grads = node.function.backward(grad)
        for tensor, input_grad in zip(node.inputs, input_grads):
            if input_grad is None or not tensor.requires_grad:
                continue
            if tensor.is_leaf:
                if tensor.grad is None:
                    tensor.grad = np.zeros_like(tensor.data)
                tensor.grad += input_grad.astype(tensor.data.dtype, copy=False)
            elif tensor.id in pending:
                pending[tensor.id] = pending[tensor.id] + input_grad
            else:
                pending[tensor.id] = input_grad
    graph.clear()


def init_uniform(rng, shape, fan_in, dtype=np.float32, name=None):
    """Fan-in scaled uniform init, bound sqrt(6 / fan_in)."""
    bound = math.sqrt(6.0 / max(1, fan_in))
    return Parameter(rng.uniform(-bound, bound, size=shape), dtype=dtype, name=name)


def init_zeros(shape, dtype=np.float32, name=None):
    return Parameter(np.zeros(shape), dtype=dtype, name=name)


def clip_grad_norm(params, max_norm):
    """Scale all grads in place so their joint L2 norm is at most max_norm; returns the pre-clip norm."""
    total = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params if p.grad is not None))
    if max_norm and max_norm > 0 and total > max_norm:
        factor = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= p.grad.dtype.type(factor)
    return total


def clip_grad_norm_blocks(blocks, max_norm):
    """clip_grad_norm applied to each block on its own; returns {block: pre-clip norm}."""
    return {name: clip_grad_norm(params, max_norm) for name, params in blocks.items()}


def sgd_step(params, grads=None, lr=0.01, weight_decay=0.0, momentum=0.0, buffers=None):
    """
    d = g + weight_decay * p; with momentum, v <- momentum * v + d and d = v;
    p <- p - lr * d, then zero the grads.
    `lr` is a scalar or one value per parameter; `grads` defaults to p.grad.
    `buffers` maps id(p) to its velocity and is updated in place.
    """
    params = list(params)
    grads = [p.grad for p in params] if grads is None else list(grads)
    lrs = list(lr) if isinstance(lr, (list, tuple)) else [lr] * len(params)
    if len(grads) != len(params) or len(lrs) != len(params):
        raise ShapeError("sgd_step: params, grads and learning rates must align")
    if momentum and buffers is None:
        raise ShapeError("sgd_step: momentum needs a buffer store")
    for p, g, step in zip(params, grads, lrs):
        if g is None:
            g = np.zeros_like(p.data)
        update = g + p.data * p.data.dtype.type(weight_decay)
        if momentum:
            velocity = buffers.get(id(p))
            if velocity is None:
                velocity = update.astype(p.data.dtype, copy=True)
            else:
                velocity = velocity * p.data.dtype.type(momentum) + update
            buffers[id(p)] = velocity
            update = velocity
        p.data -= p.data.dtype.type(step) * update
        p.grad = np.zeros_like(p.data)


class StepDecaySGD:
    """
    SGD with optional heavy-ball momentum over named parameter groups and a
    multiplicative step decay: lr_group(t) = base_lr * gamma ** (number of milestones <= t).
    """

    def __init__(self, groups, weight_decay=0.0, milestones=(), gamma=0.1, momentum=0.0):
        self.groups = [{"name": g["name"], "params": list(g["params"]), "lr": float(g["lr"])} for g in groups]
        self.weight_decay = float(weight_decay)
        self.milestones = sorted(int(m) for m in milestones)
        self.gamma = float(gamma)
        self.momentum = float(momentum)
        self.buffers = {}

    def params(self):
        return [p for group in self.groups for p in group["params"]]

    def lr_at(self, iteration):
        drops = sum(1 for m in self.milestones if iteration >= m)
        factor = self.gamma ** drops
        return {group["name"]: group["lr"] * factor for group in self.groups}

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def step(self, iteration):
        rates = self.lr_at(iteration)
        for group in self.groups:
            sgd_step(
                group["params"],
                lr=rates[group["name"]],
                weight_decay=self.weight_decay,
                momentum=self.momentum,
                buffers=self.buffers,
            )
        return rates
