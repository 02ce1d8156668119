"""Minimal reverse-mode automatic differentiation over NumPy arrays.

Covers exactly the operator set the panorama autoencoder needs: strided
convolution and its transpose (im2col/col2im via the kernels backend),
batch normalization, ELU, fully-connected layers, additive skips, the
L1/L2/softmax-cross-entropy losses, a gradient reversal layer, and a
right-matmul against a constant matrix (the differentiable render step).

Tensors carry float32 data in normal training; every op also works in
float64, which is what the finite-difference checks use. Loss reductions
accumulate in float64 regardless of storage dtype.
"""

import numpy as np

from . import kernels as K


class Tensor:
    """Array node in the tape. Gradients accumulate into .grad on backward()."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, op="leaf"):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op}, grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-mode sweep from a scalar root."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar root")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is None or node.grad is None:
                continue
            grads = node._backward_fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                g = np.asarray(g, dtype=parent.data.dtype)
                if parent.grad is None:
                    parent.grad = g.reshape(parent.data.shape).copy()
                else:
                    parent.grad += g.reshape(parent.data.shape)


def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _node(data, parents, backward_fn, op):
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents), op=op)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# convolutions

def conv2d(x, w, b, stride=2, padding=None):
    """Strided 2d convolution; 'same' padding so even H maps to H/stride.

    x: (N, Cin, H, W); w: (Cout, Cin, kh, kw); b: (Cout,).
    """
    cout, cin, kh, kw = w.data.shape
    if padding is None:
        padding = (kh - 1) // 2
    n, cin_x, h, wdt = x.data.shape
    if cin_x != cin:
        raise ValueError(f"conv2d: input has {cin_x} channels, weights expect {cin}")
    cols = K.im2col(x.data, kh, kw, stride, padding)  # (K, N*P)
    w2 = w.data.reshape(cout, cin * kh * kw)
    oh = K.conv_out_size(h, kh, stride, padding)
    ow = K.conv_out_size(wdt, kw, stride, padding)
    p = oh * ow
    out2 = w2 @ cols  # (Cout, N*P)
    y = np.ascontiguousarray(out2.reshape(cout, n, p).transpose(1, 0, 2)).reshape(n, cout, oh, ow)
    y += b.data.reshape(1, cout, 1, 1)

    def backward(g):
        gf = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, n * p)
        gx = gw = gb = None
        if x.requires_grad:
            gx = K.col2im(w2.T @ gf, n, cin, h, wdt, kh, kw, stride, padding)
        if w.requires_grad:
            gw = (gf @ cols.T).reshape(w.data.shape)
        if b.requires_grad:
            gb = gf.sum(axis=1)
        return gx, gw, gb

    return _node(y, (x, w, b), backward, "conv2d")


def conv_transpose2d(x, w, b, stride=2, padding=None, output_padding=1):
    """Transposed convolution; inverse geometry of conv2d (H -> stride*H).

    x: (N, Cin, H, W); w: (Cin, Cout, kh, kw); b: (Cout,). The forward map
    is the adjoint of conv2d's forward with the same kernel.
    """
    cin, cout, kh, kw = w.data.shape
    if padding is None:
        padding = (kh - 1) // 2
    n, cin_x, h, wdt = x.data.shape
    if cin_x != cin:
        raise ValueError(f"conv_transpose2d: input has {cin_x} channels, weights expect {cin}")
    oh = (h - 1) * stride + kh - 2 * padding + output_padding
    ow = (wdt - 1) * stride + kw - 2 * padding + output_padding
    w2 = w.data.reshape(cin, cout * kh * kw)
    xf = np.ascontiguousarray(x.data.transpose(1, 0, 2, 3)).reshape(cin, n * h * wdt)
    y = K.col2im(w2.T @ xf, n, cout, oh, ow, kh, kw, stride, padding)
    y = y + b.data.reshape(1, cout, 1, 1)

    def backward(g):
        gcols = K.im2col(g, kh, kw, stride, padding)  # (Cout*kh*kw, N*H*W)
        gx = gw = gb = None
        if x.requires_grad:
            gx2 = w2 @ gcols  # (Cin, N*H*W)
            gx = np.ascontiguousarray(
                gx2.reshape(cin, n, h * wdt).transpose(1, 0, 2)
            ).reshape(x.data.shape)
        if w.requires_grad:
            gw = (xf @ gcols.T).reshape(w.data.shape)
        if b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return _node(y, (x, w, b), backward, "conv_transpose2d")


# ---------------------------------------------------------------------------
# batch normalization

class BatchNormState:
    """Running statistics owned by one batchnorm layer."""

    def __init__(self, channels, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def copy(self):
        out = BatchNormState(self.running_mean.shape[0], self.running_mean.dtype)
        out.running_mean = self.running_mean.copy()
        out.running_var = self.running_var.copy()
        return out


BN_MOMENTUM = 0.9
BN_EPS = 1e-5


def batchnorm(x, gamma, beta, state, training, momentum=BN_MOMENTUM, eps=BN_EPS, update_running=True):
    """Batch normalization over (N, H, W) per channel of an NCHW tensor.

    Training mode normalizes by batch statistics and (unless update_running
    is cleared) updates the running stats in `state`; inference mode
    normalizes by the running stats.
    """
    xd = x.data
    dtype = xd.dtype
    axes = (0, 2, 3)
    m = xd.shape[0] * xd.shape[2] * xd.shape[3]
    gshape = (1, -1, 1, 1)
    if training:
        mean = xd.mean(axis=axes, dtype=np.float64)
        # center in storage precision (avoids a full-size float64 temp);
        # the reduction itself still accumulates in float64
        centered = xd - mean.astype(dtype).reshape(gshape)
        var = np.square(centered).mean(axis=axes, dtype=np.float64)
        if update_running:
            state.running_mean = (momentum * state.running_mean + (1 - momentum) * mean).astype(state.running_mean.dtype)
            state.running_var = (momentum * state.running_var + (1 - momentum) * var).astype(state.running_var.dtype)
    else:
        mean = state.running_mean.astype(np.float64)
        var = state.running_var.astype(np.float64)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(dtype)
    mean = mean.astype(dtype)
    xhat = (xd - mean.reshape(gshape)) * inv_std.reshape(gshape)
    y = gamma.data.reshape(gshape) * xhat + beta.data.reshape(gshape)

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes, dtype=np.float64)
        dbeta = g.sum(axis=axes, dtype=np.float64)
        gx = None
        if x.requires_grad:
            gs = gamma.data.reshape(gshape) * inv_std.reshape(gshape)
            if training:
                dg32 = dgamma.astype(dtype).reshape(gshape)
                db32 = dbeta.astype(dtype).reshape(gshape)
                gx = gs * (g - (xhat * dg32 + db32) / dtype.type(m))
            else:
                gx = gs * g
        return (
            gx,
            dgamma if gamma.requires_grad else None,
            dbeta if beta.requires_grad else None,
        )

    return _node(y, (x, gamma, beta), backward, "batchnorm")


# ---------------------------------------------------------------------------
# pointwise / structural ops

def elu(x):
    xd = x.data
    neg = np.expm1(np.minimum(xd, 0.0))
    y = np.where(xd > 0, xd, neg.astype(xd.dtype))

    def backward(g):
        return (np.where(xd > 0, g, g * (neg + 1.0)),)

    return _node(y, (x,), backward, "elu")


def add(x, y):
    """Elementwise sum of two same-shape tensors (skip links)."""
    if x.data.shape != y.data.shape:
        raise ValueError(f"add: shape mismatch {x.data.shape} vs {y.data.shape}")
    out = x.data + y.data

    def backward(g):
        return g, g

    return _node(out, (x, y), backward, "add")


def add_scalar(x, s):
    def backward(g):
        return (g,)

    return _node(x.data + s, (x,), backward, "add_scalar")


def mul_scalar(x, s):
    def backward(g):
        return (g * s,)

    return _node(x.data * s, (x,), backward, "mul_scalar")


def linear(x, w, b):
    """Fully connected: x (N, F) with w (out, F), b (out,)."""
    y = x.data @ w.data.T + b.data

    def backward(g):
        gx = g @ w.data if x.requires_grad else None
        gw = g.T @ x.data if w.requires_grad else None
        gb = g.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return _node(y, (x, w, b), backward, "linear")


def reshape(x, shape):
    orig = x.data.shape

    def backward(g):
        return (g.reshape(orig),)

    return _node(x.data.reshape(shape), (x,), backward, "reshape")


def top_half(x):
    """Rows 0..H/2-1 of an NCHW tensor (the sky hemisphere)."""
    h = x.data.shape[2]
    y = np.ascontiguousarray(x.data[:, :, : h // 2, :])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, :, : h // 2, :] = g
        return (gx,)

    return _node(y, (x,), backward, "top_half")


def batch_slice(x, start, stop):
    """Rows start..stop of the batch axis; backward zero-fills the rest."""
    y = np.ascontiguousarray(x.data[start:stop])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        return (gx,)

    return _node(y, (x,), backward, "batch_slice")


def matmul_const(x, m):
    """x @ m with a constant (non-learnable) matrix m on the right."""
    m = np.asarray(m)
    y = x.data @ m

    def backward(g):
        return (g @ m.T,)

    return _node(y, (x,), backward, "matmul_const")


def gradient_reversal(x, lam=1.0):
    """Identity forward; backward multiplies the upstream gradient by -lam."""

    def backward(g):
        return (-lam * g,)

    return _node(x.data.copy(), (x,), backward, "gradient_reversal")


def concat0(x, y):
    """Concatenate two tensors along the batch axis."""
    n = x.data.shape[0]
    out = np.concatenate([x.data, y.data], axis=0)

    def backward(g):
        return g[:n], g[n:]

    return _node(out, (x, y), backward, "concat0")


def power_scale(x, alpha, gamma):
    """(x / alpha) ** gamma for non-negative x (inverse of the tone curve)."""
    base = np.maximum(x.data, 0.0) / alpha
    y = np.power(base, gamma)

    def backward(g):
        return (g * (gamma / alpha) * np.power(base, gamma - 1.0),)

    return _node(y, (x,), backward, "power_scale")


# ---------------------------------------------------------------------------
# losses (scalar outputs; reductions accumulate in float64)

def l1(x, t):
    t = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=x.data.dtype)
    diff = x.data - t
    y = np.float64(np.abs(diff).mean(dtype=np.float64))

    def backward(g):
        # python-float scalar keeps the storage dtype (no float64 upcast)
        return (np.sign(diff) * (float(g) / diff.size),)

    return _node(y, (x,), backward, "l1")


def mse(x, t):
    t = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=x.data.dtype)
    diff = x.data - t
    y = np.float64(np.square(diff, dtype=np.float64).mean())

    def backward(g):
        return (diff * (2.0 * float(g) / diff.size),)

    return _node(y, (x,), backward, "mse")


def softmax_xent(logits, labels):
    """Mean softmax cross-entropy; logits (N, C), labels int (N,)."""
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = z.shape[0]
    labels = np.asarray(labels)
    y = np.float64(-logp[np.arange(n), labels].mean())

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return _node(y, (logits,), backward, "softmax_xent")


# ---------------------------------------------------------------------------
# finite-difference checking

def finite_difference_check(fn, tensors, h=1e-3, rng=None, n_coords=None):
    """Max relative error between analytic and central-difference gradients.

    fn() rebuilds the scalar loss from `tensors` (float64 recommended).
    Checks every coordinate unless n_coords samples a random subset.
    """
    for t in tensors:
        t.zero_grad()
    loss = fn()
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    worst = 0.0
    for t, ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        idxs = range(flat.size)
        if n_coords is not None and flat.size > n_coords:
            idxs = rng.choice(flat.size, size=n_coords, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            up = float(fn().data)
            flat[i] = orig - h
            down = float(fn().data)
            flat[i] = orig
            num = (up - down) / (2 * h)
            ref = max(abs(num), abs(ga.reshape(-1)[i]), 1e-8)
            worst = max(worst, abs(num - ga.reshape(-1)[i]) / ref)
    return worst
