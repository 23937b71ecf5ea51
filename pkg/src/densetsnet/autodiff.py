"""Reverse-mode automatic differentiation over dense real tensors.

Define-by-run: each operation produces a new Tensor that records its parent
tensors and a closure mapping the output cotangent to parent cotangents.
``backward`` replays the recorded graph exactly once in reverse topological
order, so the graph is rebuilt per forward pass and never cached.

Arrays are numpy ndarrays.  float64 is the working precision for training and
tests; ops preserve the input dtype, so a float32 forward pass works for
inference-only builds.  Broadcasting is deliberately narrow: bias adds and
per-channel/per-instance scale factors only.
"""

from __future__ import annotations

import numpy as np

from .errors import GraphError, NumericalError, ShapeError

__all__ = [
    "Tensor", "tensor", "constant", "backward", "grad_check",
    "add", "sub", "mul", "scale", "mul_const", "square", "sigmoid",
    "hardswish", "simple_gate", "learnable_sigmoid", "channel_scale",
    "reshape", "transpose", "concat_last", "split_last", "slice_last",
    "mean", "mean_all", "sum_all", "complex_magnitude",
    "conv1d", "conv2d_pointwise", "conv2d", "conv2d_depthwise", "instance_norm",
]


class Tensor:
    """A dense real array plus an optional gradient slot and graph record.

    ``data`` is immutable by convention after creation; only ``grad`` mutates.
    Leaf tensors (no parents) with ``requires_grad`` accumulate gradients
    additively across backward calls until ``zero_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents)
        self._backward = backward_fn

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

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        """Same data, cut loose from the graph; gradients stop here."""
        return Tensor(self.data, requires_grad=False)

    def backward(self):
        backward(self)

    # Operator sugar; the named functions below are the real op set.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad=False, dtype=np.float64):
    """Create a leaf tensor from external data, rejecting NaN/Inf."""
    arr = np.asarray(data, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise NumericalError("tensor data contains NaN or Inf")
    return Tensor(arr, requires_grad=requires_grad)


def constant(data, dtype=np.float64):
    return tensor(data, requires_grad=False, dtype=dtype)


def _make(data, parents, backward_fn):
    """Internal node constructor; prunes the graph below non-grad inputs."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn)
    return Tensor(data)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (adjoint of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(loss):
    """Accumulate reverse-mode gradients of a scalar ``loss``.

    Visits each recorded node exactly once in reverse topological order.
    Gradients add into ``.grad`` of every ``requires_grad`` tensor reached,
    so repeated calls without zeroing accumulate additively.
    """
    if not isinstance(loss, Tensor):
        raise GraphError("backward expects a Tensor")
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")

    # Iterative DFS topological sort over the parent links.
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))

    # Closures may hand back views or shared arrays, so an entry is only
    # updated in place once this pass owns a fresh buffer for it.
    cotangent = {id(loss): np.ones_like(loss.data)}
    owned = {id(loss)}
    for node in reversed(topo):
        g = cotangent.pop(id(node), None)
        if g is None:
            continue
        owned.discard(id(node))
        if node.requires_grad:
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad += g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            acc = cotangent.get(key)
            if acc is None:
                cotangent[key] = pg
            elif key in owned:
                acc += pg
            else:
                cotangent[key] = acc + pg
                owned.add(key)


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a, b):
    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _make(a.data + b.data, (a, b), bwd)


def sub(a, b):
    def bwd(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)
    return _make(a.data - b.data, (a, b), bwd)


def mul(a, b):
    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _make(a.data * b.data, (a, b), bwd)


def scale(x, c):
    """Multiply by a python scalar constant."""
    c = float(c)

    def bwd(g):
        return (g * c,)
    return _make(x.data * c, (x,), bwd)


def mul_const(x, arr):
    """Elementwise product with a constant array broadcastable into x's shape."""
    arr = np.asarray(arr, dtype=x.dtype)
    out = x.data * arr
    if out.shape != x.shape:
        raise ShapeError(f"mul_const operand of shape {arr.shape} does not broadcast into {x.shape}")

    def bwd(g):
        return (g * arr,)
    return _make(out, (x,), bwd)


def square(x):
    def bwd(g):
        return (2.0 * x.data * g,)
    return _make(x.data * x.data, (x,), bwd)


def sigmoid(x):
    # tanh form is overflow-safe for large |x| in one vectorized pass
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def bwd(g):
        return (g * out * (1.0 - out),)
    return _make(out, (x,), bwd)


def hardswish(x):
    """x * clamp(x + 3, 0, 6) / 6."""
    d = x.data
    out = d * np.clip(d + 3.0, 0.0, 6.0) / 6.0

    def bwd(g):
        slope = np.where(d <= -3.0, 0.0, np.where(d >= 3.0, 1.0, (2.0 * d + 3.0) / 6.0))
        return (g * slope.astype(d.dtype),)
    return _make(out, (x,), bwd)


def simple_gate(x):
    """Split the last dim in half and return the elementwise product."""
    c2 = x.shape[-1]
    if c2 % 2:
        raise ShapeError(f"simple_gate needs an even channel count, got last dim {c2}")
    c = c2 // 2
    h1 = x.data[..., :c]
    h2 = x.data[..., c:]

    def bwd(g):
        return (np.concatenate([g * h2, g * h1], axis=-1),)
    return _make(h1 * h2, (x,), bwd)


def channel_scale(x, alpha):
    """Per-channel learnable scale along the last axis: y[..., c] = x[..., c] * alpha[c]."""
    if alpha.ndim != 1 or alpha.shape[0] != x.shape[-1]:
        raise ShapeError(
            f"channel_scale alpha has shape {alpha.shape}, expected ({x.shape[-1]},)")

    def bwd(g):
        ga = (g * x.data).reshape(-1, x.shape[-1]).sum(axis=0)
        return g * alpha.data, ga
    return _make(x.data * alpha.data, (x, alpha), bwd)


def learnable_sigmoid(x, alpha, beta=2.0):
    """beta * sigmoid(alpha_c * x) with a learnable per-channel alpha."""
    return scale(sigmoid(channel_scale(x, alpha)), beta)


def reshape(x, shape):
    def bwd(g):
        return (g.reshape(x.shape),)
    return _make(np.reshape(x.data, shape), (x,), bwd)


def transpose(x, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (np.ascontiguousarray(g.transpose(inv)),)
    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), bwd)


def concat_last(parts):
    """Concatenate along the last axis."""
    parts = tuple(parts)
    sizes = [p.shape[-1] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=-1))
    return _make(np.concatenate([p.data for p in parts], axis=-1), parts, bwd)


def slice_last(x, start, stop):
    """Contiguous slice along the last axis; the adjoint zero-embeds."""
    def bwd(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        return (full,)
    return _make(np.ascontiguousarray(x.data[..., start:stop]), (x,), bwd)


def split_last(x, sizes):
    """Split the last axis into chunks of the given sizes."""
    if sum(sizes) != x.shape[-1]:
        raise ShapeError(f"split sizes {sizes} do not sum to last dim {x.shape[-1]}")
    out = []
    start = 0
    for s in sizes:
        out.append(slice_last(x, start, start + s))
        start += s
    return tuple(out)


def mean(x, axis, keepdims=False):
    """Mean over a single axis."""
    axis = int(axis)
    n = x.shape[axis]

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape) / n,)
    return _make(x.data.mean(axis=axis, keepdims=keepdims), (x,), bwd)


def mean_all(x):
    n = x.size

    def bwd(g):
        return (np.full_like(x.data, float(g) / n),)
    return _make(np.asarray(x.data.mean()), (x,), bwd)


def sum_all(x):
    def bwd(g):
        return (np.full_like(x.data, float(g)),)
    return _make(np.asarray(x.data.sum()), (x,), bwd)


def complex_magnitude(re, im):
    """sqrt(re^2 + im^2) with a zero-safe backward (gradient 0 where mag == 0)."""
    if re.shape != im.shape:
        raise ShapeError(f"magnitude parts disagree: re {re.shape} vs im {im.shape}")
    m = np.hypot(re.data, im.data)

    def bwd(g):
        safe = np.where(m > 0.0, m, 1.0)
        w = g / safe
        return w * re.data, w * im.data
    return _make(m, (re, im), bwd)


# ---------------------------------------------------------------------------
# convolutions and normalization
# ---------------------------------------------------------------------------

def _same_pad_1d(kernel, dilation):
    span = (kernel - 1) * dilation
    left = span // 2
    return left, span - left  # even kernels pad one extra on the right


def conv1d(x, w, b, groups=1, dilation=1):
    """Grouped 1-D cross-correlation over (N, L, Cin) with same-length padding.

    Weights have shape (K, Cin // groups, Cout); groups == Cin == Cout is the
    depthwise case, kernel 1 with groups 1 is pointwise.  Output length always
    equals the input length.
    """
    if x.ndim != 3:
        raise ShapeError(f"conv1d input must be rank 3 (N, L, C), got rank {x.ndim}")
    n, length, cin = x.shape
    k, cin_g, cout = w.shape
    if cin % groups:
        raise ShapeError(f"conv1d Cin={cin} not divisible by groups={groups}")
    if cout % groups:
        raise ShapeError(f"conv1d Cout={cout} not divisible by groups={groups}")
    if cin_g != cin // groups:
        raise ShapeError(
            f"conv1d weight dim 1 is {cin_g}, expected Cin/groups = {cin // groups}")
    if b.shape != (cout,):
        raise ShapeError(f"conv1d bias has shape {b.shape}, expected ({cout},)")

    pl, pr = _same_pad_1d(k, dilation)
    xp = np.pad(x.data, ((0, 0), (pl, pr), (0, 0))) if pl or pr else x.data

    depthwise = groups == cin and cout == cin
    if depthwise and dilation == 1 and k >= 9 and length >= 2:
        return _conv1d_dw_fft(x, w, b, xp, length, pl)
    if depthwise:
        return _conv1d_dw_taps(x, w, b, xp, length, pl, dilation)
    if groups == 1:
        return _conv1d_dense_taps(x, w, b, xp, length, pl, dilation)
    return _conv1d_grouped(x, w, b, xp, length, pl, dilation, groups)


def _next_fast_len(n):
    # smallest 5-smooth length >= n; prime sizes hit pocketfft's slow path
    while True:
        m = n
        for p in (2, 3, 5):
            while m % p == 0:
                m //= p
        if m == 1:
            return n
        n += 1


def _conv1d_dw_fft(x, w, b, xp, length, pl):
    # Linear correlation via FFT along L; any transform size >= L + K - 1
    # is wrap-free for taps 0..K-1, so round up to a fast composite.
    k = w.shape[0]
    wk = w.data[:, 0, :]  # (K, C)
    nf = _next_fast_len(length + k - 1)
    xf = np.fft.rfft(xp, n=nf, axis=1)
    wf = np.fft.rfft(wk, n=nf, axis=0)
    out = np.fft.irfft(xf * np.conj(wf)[None], n=nf, axis=1)[:, :length, :]
    out = out.astype(x.dtype, copy=False) + b.data

    def bwd(g):
        gf = np.fft.rfft(g, n=nf, axis=1)
        gx_pad = np.fft.irfft(gf * wf[None], n=nf, axis=1)
        gx = np.ascontiguousarray(gx_pad[:, pl:pl + length, :]).astype(x.dtype, copy=False)
        gw = np.fft.irfft((xf * np.conj(gf)).sum(axis=0), n=nf, axis=0)[:k, :]
        gw = gw.astype(x.dtype, copy=False)[:, None, :]
        gb = g.sum(axis=(0, 1))
        return gx, gw, gb
    return _make(out, (x, w, b), bwd)


def _conv1d_dw_taps(x, w, b, xp, length, pl, dilation):
    k = w.shape[0]
    wk = w.data[:, 0, :]
    out = np.zeros_like(x.data)
    for t in range(k):
        off = t * dilation
        out += xp[:, off:off + length, :] * wk[t]
    out += b.data

    def bwd(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w.data)
        for t in range(k):
            off = t * dilation
            gxp[:, off:off + length, :] += g * wk[t]
            gw[t, 0, :] = (xp[:, off:off + length, :] * g).sum(axis=(0, 1))
        gx = gxp[:, pl:pl + length, :]
        return gx, gw, g.sum(axis=(0, 1))
    return _make(out, (x, w, b), bwd)


def _conv1d_dense_taps(x, w, b, xp, length, pl, dilation):
    n, _, cin = x.shape
    k, _, cout = w.shape
    flat = xp.reshape(-1, cin) if k == 1 else None
    if k == 1:
        out = (flat @ w.data[0]).reshape(n, length, cout)
    else:
        acc = np.zeros((n * length, cout), dtype=x.dtype)
        for t in range(k):
            off = t * dilation
            acc += xp[:, off:off + length, :].reshape(-1, cin) @ w.data[t]
        out = acc.reshape(n, length, cout)
    out = out + b.data

    def bwd(g):
        gflat = g.reshape(-1, cout)
        gw = np.empty_like(w.data)
        if k == 1:
            gx = (gflat @ w.data[0].T).reshape(n, length, cin)
            gw[0] = flat.T @ gflat
        else:
            gxp = np.zeros_like(xp)
            for t in range(k):
                off = t * dilation
                seg = xp[:, off:off + length, :].reshape(-1, cin)
                gw[t] = seg.T @ gflat
                gxp[:, off:off + length, :] += (gflat @ w.data[t].T).reshape(n, length, cin)
            gx = gxp[:, pl:pl + length, :]
        return np.ascontiguousarray(gx), gw, g.sum(axis=(0, 1))
    return _make(out, (x, w, b), bwd)


def _conv1d_grouped(x, w, b, xp, length, pl, dilation, groups):
    n, _, cin = x.shape
    k, cin_g, cout = w.shape
    cout_g = cout // groups
    out = np.zeros((n, length, cout), dtype=x.dtype)
    for gi in range(groups):
        xs = slice(gi * cin_g, (gi + 1) * cin_g)
        os = slice(gi * cout_g, (gi + 1) * cout_g)
        for t in range(k):
            off = t * dilation
            seg = xp[:, off:off + length, xs].reshape(-1, cin_g)
            out[:, :, os] += (seg @ w.data[t, :, os]).reshape(n, length, cout_g)
    out += b.data

    def bwd(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for gi in range(groups):
            xs = slice(gi * cin_g, (gi + 1) * cin_g)
            os = slice(gi * cout_g, (gi + 1) * cout_g)
            gseg = g[:, :, os].reshape(-1, cout_g)
            for t in range(k):
                off = t * dilation
                seg = xp[:, off:off + length, xs].reshape(-1, cin_g)
                gw[t, :, os] = seg.T @ gseg
                gxp[:, off:off + length, xs] += (gseg @ w.data[t, :, os].T).reshape(n, length, cin_g)
        return gxp[:, pl:pl + length, :], gw, g.sum(axis=(0, 1))
    return _make(out, (x, w, b), bwd)


def conv2d_pointwise(x, w, b):
    """1x1 convolution over (B, T, F, Cin): a per-position channel map."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d_pointwise input must be rank 4, got rank {x.ndim}")
    cin, cout = w.shape
    if x.shape[-1] != cin:
        raise ShapeError(
            f"conv2d_pointwise channel mismatch: input Cin={x.shape[-1]}, weight Cin={cin}")
    if b.shape != (cout,):
        raise ShapeError(f"conv2d_pointwise bias has shape {b.shape}, expected ({cout},)")
    lead = x.shape[:-1]
    flat = x.data.reshape(-1, cin)
    out = (flat @ w.data).reshape(*lead, cout) + b.data

    def bwd(g):
        gflat = g.reshape(-1, cout)
        gx = (gflat @ w.data.T).reshape(x.shape)
        gw = flat.T @ gflat
        return gx, gw, gflat.sum(axis=0)
    return _make(out, (x, w, b), bwd)


def conv2d(x, w, b, stride=(1, 1), dilation=(1, 1)):
    """2-D cross-correlation over (B, H, W, Cin) with SAME-style padding.

    Output spatial dims are ceil(H / stride); used by the metric discriminator
    (stride 2) and the dilated dense blocks of the classic baseline.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be rank 4, got rank {x.ndim}")
    bsz, hh, ww_, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if wcin != cin:
        raise ShapeError(f"conv2d channel mismatch: input Cin={cin}, weight Cin={wcin}")
    sh, sw = stride
    dh, dw = dilation
    ho = -(-hh // sh)
    wo = -(-ww_ // sw)
    pad_h = max(0, (ho - 1) * sh + (kh - 1) * dh + 1 - hh)
    pad_w = max(0, (wo - 1) * sw + (kw - 1) * dw + 1 - ww_)
    pt, pb = pad_h // 2, pad_h - pad_h // 2
    plft, prgt = pad_w // 2, pad_w - pad_w // 2
    xp = np.pad(x.data, ((0, 0), (pt, pb), (plft, prgt), (0, 0)))

    def tap(arr, i, j):
        return arr[:, i * dh: i * dh + sh * ho: sh, j * dw: j * dw + sw * wo: sw, :]

    out = np.zeros((bsz, ho, wo, cout), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            seg = tap(xp, i, j).reshape(-1, cin)
            out += (seg @ w.data[i, j]).reshape(bsz, ho, wo, cout)
    out += b.data

    def bwd(g):
        gflat = g.reshape(-1, cout)
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w.data)
        for i in range(kh):
            for j in range(kw):
                seg = tap(xp, i, j).reshape(-1, cin)
                gw[i, j] = seg.T @ gflat
                tap(gxp, i, j)[...] += (gflat @ w.data[i, j].T).reshape(bsz, ho, wo, cin)
        gx = gxp[:, pt:pt + hh, plft:plft + ww_, :]
        return np.ascontiguousarray(gx), gw, gflat.sum(axis=0)
    return _make(out, (x, w, b), bwd)


def conv2d_depthwise(x, w, b):
    """Per-channel 3x3-style conv over (B, H, W, C), stride 1, SAME padding."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d_depthwise input must be rank 4, got rank {x.ndim}")
    bsz, hh, ww_, c = x.shape
    kh, kw, wc = w.shape
    if wc != c:
        raise ShapeError(f"conv2d_depthwise channel mismatch: input C={c}, weight C={wc}")
    pt, pb = _same_pad_1d(kh, 1)
    plft, prgt = _same_pad_1d(kw, 1)
    xp = np.pad(x.data, ((0, 0), (pt, pb), (plft, prgt), (0, 0)))
    out = np.zeros_like(x.data)
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i:i + hh, j:j + ww_, :] * w.data[i, j]
    out += b.data

    def bwd(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w.data)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + hh, j:j + ww_, :] += g * w.data[i, j]
                gw[i, j] = (xp[:, i:i + hh, j:j + ww_, :] * g).sum(axis=(0, 1, 2))
        return gxp[:, pt:pt + hh, plft:plft + ww_, :], gw, g.sum(axis=(0, 1, 2))
    return _make(out, (x, w, b), bwd)


def instance_norm(x, gamma, beta, eps=1e-5):
    """Normalize each (instance, channel) over the length axis of (N, L, C).

    Biased variance, then a per-channel affine.  L must be at least 2; a
    single position has no meaningful variance.
    """
    if x.ndim != 3:
        raise ShapeError(f"instance_norm input must be rank 3 (N, L, C), got rank {x.ndim}")
    n, length, c = x.shape
    if length < 2:
        raise ShapeError(f"instance_norm needs L >= 2, got L={length}")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"instance_norm affine shapes {gamma.shape}/{beta.shape} do not match C={c}")
    mu = x.data.mean(axis=1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def bwd(g):
        gg = g * gamma.data
        m1 = gg.mean(axis=1, keepdims=True)
        m2 = (gg * xhat).mean(axis=1, keepdims=True)
        gx = inv * (gg - m1 - xhat * m2)
        ggamma = (g * xhat).sum(axis=(0, 1))
        gbeta = g.sum(axis=(0, 1))
        return gx.astype(x.dtype, copy=False), ggamma, gbeta
    return _make(out.astype(x.dtype, copy=False), (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# verification harness
# ---------------------------------------------------------------------------

def grad_check(fn, tensors, step=1e-4):
    """Max relative error between autodiff and central finite differences.

    ``fn`` rebuilds a scalar Tensor from the current contents of ``tensors``
    (leaf tensors that require grad).  Each coordinate of each tensor is
    perturbed by +-step; the worst coordinate's error is returned, with the
    difference measured relative to max(|fd|, |ad|, 1).
    """
    for t in tensors:
        t.zero_grad()
    out = fn()
    if out.size != 1:
        raise GraphError("grad_check expects fn() to produce a scalar")
    backward(out)
    analytic = [np.array(t.grad, copy=True) if t.grad is not None else np.zeros_like(t.data)
                for t in tensors]

    worst = 0.0
    for t, ad_grad in zip(tensors, analytic):
        for idx in np.ndindex(*t.data.shape):
            orig = t.data[idx]
            t.data[idx] = orig + step
            f_plus = float(fn().data)
            t.data[idx] = orig - step
            f_minus = float(fn().data)
            t.data[idx] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            denom = max(abs(fd), abs(ad_grad[idx]), 1.0)
            worst = max(worst, abs(fd - ad_grad[idx]) / denom)
    return worst


def assert_finite(t, context=""):
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values{' in ' + context if context else ''}")
