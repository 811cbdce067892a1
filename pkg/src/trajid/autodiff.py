"""Reverse-mode automatic differentiation for a 1-D convolutional net.

Deliberately minimal: exactly the operations a small residual conv
classifier needs (conv1d, batchnorm1d, relu, add, global_avg_pool,
linear, softmax_cross_entropy) plus two optimizers.  Ops execute eagerly
on numpy buffers and append a backward closure to a :class:`Tape`;
:func:`backward` walks the tape once in reverse and accumulates
gradients into every tensor that requires them.

dtype follows the inputs: float32 for training, float64 when checking
gradients against finite differences.  Passing ``tape=None`` runs
forward-only (no closures are recorded), which is how evaluation avoids
autodiff overhead.
"""

import math

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "conv1d",
    "batchnorm1d",
    "relu",
    "add",
    "global_avg_pool",
    "linear",
    "softmax_cross_entropy",
    "Adam",
    "MomentumSGD",
]


class Tensor:
    """A numpy buffer with an optional gradient buffer.

    ``values`` may be a view (the parameter store keeps all parameters
    in one flat buffer); ``grad`` is allocated lazily on first
    accumulation unless preassigned as a view as well.
    """

    __slots__ = ("values", "grad", "requires_grad", "_origin")

    def __init__(self, values, requires_grad=False):
        self.values = np.asarray(values)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._origin = None  # tape that produced this tensor; None for leaves

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.values.shape}, dtype={self.values.dtype}{flag})"


class Tape:
    """Ordered record of executed ops, walked once in reverse by backward()."""

    __slots__ = ("_records", "finished")

    def __init__(self):
        self._records = []  # (output tensor, closure taking dout)
        self.finished = False

    def __len__(self):
        return len(self._records)


def _record(tape, inputs, values, bwd_factory):
    """Create the op output and, when gradients can flow, record backward.

    ``bwd_factory`` is called lazily (only if anything requires grad) and
    must return a ``fn(dout)`` closure.
    """
    out = Tensor(values, requires_grad=any(t.requires_grad for t in inputs))
    if tape is not None and out.requires_grad:
        if tape.finished:
            raise RuntimeError("tape already consumed by backward; build a new Tape")
        out._origin = tape
        tape._records.append((out, bwd_factory()))
    return out


def _accum(tensor, delta, owned=False):
    # owned=True promises delta is freshly allocated by the caller and not
    # aliased anywhere else, so the first accumulation can adopt it
    if tensor.grad is None:
        if owned:
            tensor.grad = delta
            return
        tensor.grad = np.zeros_like(tensor.values)
    tensor.grad += delta


def backward(tape: Tape, loss: Tensor, seed: float = 1.0) -> None:
    """Accumulate d(seed*loss)/d(tensor) into every requires_grad tensor.

    The tape can be walked once; a second call is an error, as is a loss
    that was not produced by ops recorded on this tape.
    """
    if tape.finished:
        raise RuntimeError("reentrant backward: tape already consumed")
    if not loss.requires_grad or loss._origin is not tape:
        raise RuntimeError("backward on a detached tensor: loss was not produced on this tape")
    if loss.values.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.values.shape}")
    tape.finished = True
    loss.grad = np.full_like(loss.values, seed)
    for out, fn in reversed(tape._records):
        if out.grad is not None:
            fn(out.grad)


def conv1d(tape, x: Tensor, w: Tensor, b: Tensor = None, stride: int = 1, pad: int = 0,
           channels_last: bool = False) -> Tensor:
    """Cross-correlation (no kernel flip): (B,Cin,L) * (Cout,Cin,K) -> (B,Cout,Lout).

    Lout = floor((L + 2*pad - K)/stride) + 1 with zero padding.  Realized
    as a strided im2col view contracted in one GEMM.  ``channels_last``
    switches input/output to (B, L, C); the weight stays (Cout, Cin, K).
    That layout folds the im2col copy and both matmuls into contiguous
    2-D GEMMs with no transposes, which is the fast path.
    """
    xv, wv = x.values, w.values
    if xv.ndim != 3 or wv.ndim != 3:
        raise ValueError(f"conv1d expects 3-D input and weight, got {xv.shape} and {wv.shape}")
    if channels_last:
        n_batch, length, c_in = xv.shape
    else:
        n_batch, c_in, length = xv.shape
    c_out, c_in_w, kernel = wv.shape
    if c_in_w != c_in:
        raise ValueError(f"channel mismatch: input has {c_in}, weight expects {c_in_w}")
    if b is not None and b.values.shape != (c_out,):
        raise ValueError(f"bias must have shape ({c_out},), got {b.values.shape}")
    if stride < 1 or pad < 0:
        raise ValueError(f"need stride >= 1 and pad >= 0, got {stride}, {pad}")
    if length + 2 * pad < kernel:
        raise ValueError(f"kernel {kernel} exceeds padded length {length + 2 * pad}")
    l_out = (length + 2 * pad - kernel) // stride + 1
    inputs = (x, w) if b is None else (x, w, b)

    if channels_last:
        if pad:
            xp = np.zeros((n_batch, length + 2 * pad, c_in), dtype=xv.dtype)
            xp[:, pad : pad + length, :] = xv
        else:
            xp = np.ascontiguousarray(xv)
        s_b, s_l, s_c = xp.strides
        view = np.lib.stride_tricks.as_strided(
            xp, shape=(n_batch, l_out, c_in, kernel),
            strides=(s_b, s_l * stride, s_c, s_l), writeable=False,
        )
        # the reshape copies (windows overlap), yielding the im2col matrix
        col = view.reshape(n_batch * l_out, c_in * kernel)
        w2 = wv.reshape(c_out, c_in * kernel)
        y2 = col @ w2.T
        if b is not None:
            y2 += b.values[None, :]

        def factory():
            def bwd(dout):
                dout2 = dout.reshape(n_batch * l_out, c_out)
                if b is not None and b.requires_grad:
                    _accum(b, dout2.sum(axis=0), owned=True)
                if w.requires_grad:
                    _accum(w, (dout2.T @ col).reshape(wv.shape), owned=True)
                if x.requires_grad:
                    dcol = (dout2 @ w2).reshape(n_batch, l_out, c_in, kernel)
                    dxp = np.zeros((n_batch, length + 2 * pad, c_in), dtype=dout.dtype)
                    for k in range(kernel):
                        dxp[:, k : k + stride * l_out : stride, :] += dcol[:, :, :, k]
                    _accum(x, dxp[:, pad : pad + length, :] if pad else dxp, owned=True)
            return bwd

        return _record(tape, inputs, y2.reshape(n_batch, l_out, c_out), factory)

    if pad:
        xp = np.zeros((n_batch, c_in, length + 2 * pad), dtype=xv.dtype)
        xp[:, :, pad : pad + length] = xv
    else:
        xp = xv
    s_b, s_c, s_l = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(n_batch, c_in, kernel, l_out),
        strides=(s_b, s_c, s_l, s_l * stride), writeable=False,
    )
    y = np.ascontiguousarray(np.tensordot(wv, view, axes=([1, 2], [1, 2])).transpose(1, 0, 2))
    if b is not None:
        y += b.values[None, :, None]

    def factory():
        def bwd(dout):
            if b is not None and b.requires_grad:
                _accum(b, dout.sum(axis=(0, 2)), owned=True)
            if w.requires_grad:
                _accum(w, np.tensordot(dout, view, axes=([0, 2], [0, 3])), owned=True)
            if x.requires_grad:
                dt = np.tensordot(dout, wv, axes=([1], [0]))  # (B, Lout, Cin, K)
                dxp = np.zeros_like(xp)
                for k in range(kernel):
                    dxp[:, :, k : k + stride * l_out : stride] += dt[:, :, :, k].transpose(0, 2, 1)
                _accum(x, dxp[:, :, pad : pad + length] if pad else dxp, owned=True)
        return bwd

    return _record(tape, inputs, y, factory)


def batchnorm1d(tape, x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: np.ndarray, running_var: np.ndarray,
                train: bool, momentum: float = 0.1, eps: float = 1e-5,
                channels_last: bool = False) -> Tensor:
    """Per-channel normalization over batch and length, with running stats.

    Train mode uses the batch's population statistics and updates
    ``running <- (1-momentum)*running + momentum*batch_stat`` in place;
    eval mode reads the running stats and is a pure affine map.
    ``channels_last`` reads (B, L, C) instead of (B, C, L).
    """
    xv = x.values
    if xv.ndim != 3:
        raise ValueError(f"batchnorm1d expects a 3-D input, got {xv.shape}")
    if channels_last:
        n_batch, length, channels = xv.shape
        red, bc, sig = (0, 1), np.s_[None, None, :], "blc,blc->c"
    else:
        n_batch, channels, length = xv.shape
        red, bc, sig = (0, 2), np.s_[None, :, None], "bcl,bcl->c"
    if gamma.values.shape != (channels,) or beta.values.shape != (channels,):
        raise ValueError(f"gamma/beta must have shape ({channels},)")
    count = n_batch * length
    if train:
        if count < 2:
            raise ValueError(f"train-mode batchnorm needs B*L >= 2, got {count}")
        mean = xv.mean(axis=red)
        sq = np.einsum(sig, xv, xv) / count
        var = np.maximum(sq - mean * mean, 0.0)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean.copy()
        var = running_var.copy()
    inv_std = 1.0 / np.sqrt(var + eps)
    # fold normalize+affine into one fused multiply-add; xhat is only
    # needed for gradients, so it is rebuilt inside the backward closure
    scale = gamma.values * inv_std
    shift = beta.values - mean * scale
    y = xv * scale[bc]
    y += shift[bc]

    def factory():
        def bwd(dout):
            xhat = (xv - mean[bc]) * inv_std[bc]
            if gamma.requires_grad:
                _accum(gamma, np.einsum(sig, dout, xhat), owned=True)
            if beta.requires_grad:
                _accum(beta, dout.sum(axis=red), owned=True)
            if x.requires_grad:
                dxhat = dout * gamma.values[bc]
                if train:
                    # full chain rule including the variance path
                    s1 = dxhat.sum(axis=red)
                    s2 = np.einsum(sig, dxhat, xhat)
                    dx = (inv_std[bc] / count) * (
                        count * dxhat - s1[bc] - xhat * s2[bc]
                    )
                else:
                    dx = dxhat * inv_std[bc]
                _accum(x, dx, owned=True)
        return bwd

    return _record(tape, (x, gamma, beta), y, factory)


def relu(tape, x: Tensor) -> Tensor:
    mask = x.values > 0

    def factory():
        def bwd(dout):
            if x.requires_grad:
                _accum(x, dout * mask, owned=True)
        return bwd

    return _record(tape, (x,), np.maximum(x.values, 0), factory)


def add(tape, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise residual sum; shapes must match exactly."""
    if a.values.shape != b.values.shape:
        raise ValueError(f"add shape mismatch: {a.values.shape} vs {b.values.shape}")

    def factory():
        def bwd(dout):
            if a.requires_grad:
                _accum(a, dout)
            if b.requires_grad:
                _accum(b, dout)
        return bwd

    return _record(tape, (a, b), a.values + b.values, factory)


def global_avg_pool(tape, x: Tensor, channels_last: bool = False) -> Tensor:
    """(B, C, L) -> (B, C), mean over the time axis; (B, L, C) if channels_last."""
    if x.values.ndim != 3:
        raise ValueError(f"global_avg_pool expects a 3-D input, got {x.values.shape}")
    axis = 1 if channels_last else 2
    length = x.values.shape[axis]

    def factory():
        def bwd(dout):
            if x.requires_grad:
                g = dout / length
                # broadcast delta: cannot be adopted as the grad buffer
                _accum(x, g[:, None, :] if channels_last else g[:, :, None])
        return bwd

    return _record(tape, (x,), x.values.mean(axis=axis), factory)


def linear(tape, x: Tensor, w: Tensor, b: Tensor = None) -> Tensor:
    """(B, F) @ (O, F)^T + (O,) -> (B, O)."""
    xv, wv = x.values, w.values
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[1]:
        raise ValueError(f"linear shape mismatch: input {xv.shape}, weight {wv.shape}")
    if b is not None and b.values.shape != (wv.shape[0],):
        raise ValueError(f"bias must have shape ({wv.shape[0]},), got {b.values.shape}")
    y = xv @ wv.T
    if b is not None:
        y += b.values[None, :]

    inputs = (x, w) if b is None else (x, w, b)

    def factory():
        def bwd(dout):
            if b is not None and b.requires_grad:
                _accum(b, dout.sum(axis=0), owned=True)
            if w.requires_grad:
                _accum(w, dout.T @ xv, owned=True)
            if x.requires_grad:
                _accum(x, dout @ wv, owned=True)
        return bwd

    return _record(tape, inputs, y, factory)


def softmax_cross_entropy(tape, logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of softmax(logits) against integer labels.

    Stabilized by max subtraction.  Returns a scalar tensor; the
    gradient with respect to the logits is (softmax - onehot)/B.
    """
    lv = logits.values
    if lv.ndim != 2:
        raise ValueError(f"softmax_cross_entropy expects (B, O) logits, got {lv.shape}")
    labels = np.asarray(labels)
    n_batch, n_classes = lv.shape
    if labels.shape != (n_batch,):
        raise ValueError(f"labels must have shape ({n_batch},), got {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"labels must be integers, got dtype {labels.dtype}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label out of range [0, {n_classes - 1}]")
    shifted = lv - lv.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1)
    rows = np.arange(n_batch)
    nll = np.log(total) - shifted[rows, labels]
    loss = np.asarray(nll.mean(), dtype=lv.dtype)

    def factory():
        def bwd(dout):
            if logits.requires_grad:
                dlogits = exp / total[:, None]
                dlogits[rows, labels] -= 1.0
                dlogits *= dout / n_batch
                _accum(logits, dlogits, owned=True)
        return bwd

    return _record(tape, (logits,), loss, factory)


class MomentumSGD:
    """Classic momentum: v <- momentum*v + g; w <- w - lr*v.

    Operates in place on flat parameter/gradient buffers.
    """

    def __init__(self, values: np.ndarray, grads: np.ndarray, lr: float, momentum: float = 0.9):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        if values.shape != grads.shape:
            raise ValueError("values/grads shape mismatch")
        self.values = values
        self.grads = grads
        self.lr = lr
        self.momentum = momentum
        self.velocity = np.zeros_like(values)
        self.step_count = 0

    def step(self):
        self.velocity *= self.momentum
        self.velocity += self.grads
        self.values -= self.lr * self.velocity
        self.step_count += 1


class Adam:
    """Adam with bias correction, in place on flat buffers."""

    def __init__(self, values: np.ndarray, grads: np.ndarray, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError(f"betas must be in [0, 1), got {beta1}, {beta2}")
        if eps <= 0:
            raise ValueError(f"eps must be positive, got {eps}")
        if values.shape != grads.shape:
            raise ValueError("values/grads shape mismatch")
        self.values = values
        self.grads = grads
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros_like(values)
        self.v = np.zeros_like(values)
        self._scratch = np.empty_like(values)
        self.step_count = 0

    def step(self):
        self.step_count += 1
        t = self.step_count
        g = self.grads
        s = self._scratch
        self.m *= self.beta1
        np.multiply(g, 1.0 - self.beta1, out=s)
        self.m += s
        self.v *= self.beta2
        np.multiply(g, g, out=s)
        s *= 1.0 - self.beta2
        self.v += s
        # fused bias correction: same update as m_hat/(sqrt(v_hat)+eps)
        correction = math.sqrt(1.0 - self.beta2**t)
        alpha = self.lr * correction / (1.0 - self.beta1**t)
        np.sqrt(self.v, out=s)
        s += self.eps * correction
        np.divide(self.m, s, out=s)
        s *= alpha
        self.values -= s
