"""Time-stepped network execution with reverse-mode gradients.

Activations are carried as (B, T, ...) arrays. Layers without state (conv,
batch-norm, pooling, linear, dropout) are applied to all B*T frames at once;
spiking layers scan over the T axis with persistent membrane potential.

The spike nonlinearity backpropagates through the arctan surrogate
s'(u) = a / (2 (1 + (pi*a*u/2)^2)) with u = V_mid - threshold, and the hard
reset multiplier (1 - spike) is held constant during differentiation, so no
gradient flows through the reset path. For gradient verification the forward
can run with "smooth" spike outputs s(u) = 1/2 + arctan(pi*a*u/2)/pi, whose
exact derivative is the surrogate; the reset gate stays hard in that mode so
finite differences of the smooth forward match the analytic backward.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError, NumericError
from .model import (
    BatchNorm,
    Conv2d,
    Dropout,
    LIF,
    Linear,
    MaxPool2d,
    ModelSpec,
    ParamVector,
    Voting,
    compiled,
    zeros_like,
)

_BN_EPS = 1e-5
_BN_MOMENTUM = 0.1


def surrogate_derivative(u: np.ndarray, width: float) -> np.ndarray:
    z = (np.pi * width / 2.0) * u
    return (width / 2.0) / (1.0 + z * z)


def surrogate_sigmoid(u: np.ndarray, width: float) -> np.ndarray:
    return 0.5 + np.arctan((np.pi * width / 2.0) * u) / np.pi


def lif_step(V: np.ndarray, I: np.ndarray, cfg) -> tuple[np.ndarray, np.ndarray]:
    """One hard-threshold membrane update.

    V_mid = V + (I - V)/tau; spike where V_mid >= threshold; spiking units
    reset to zero.
    """
    V = np.asarray(V, dtype=np.float64)
    I = np.asarray(I, dtype=np.float64)
    if V.shape != I.shape:
        raise ConfigurationError(f"V shape {V.shape} != I shape {I.shape}")
    if not (np.isfinite(V).all() and np.isfinite(I).all()):
        raise NumericError("lif_step requires finite membrane potential and input")
    v_mid = V + (I - V) / cfg.tau
    spikes = (v_mid >= cfg.threshold).astype(np.float64)
    return spikes, v_mid * (1.0 - spikes)


def _conv_cols(x: np.ndarray, kernel: int) -> np.ndarray:
    """im2col for stride-1 same-padded convolution: (N,C,H,W) ->
    (N*H*W, C*k*k)."""
    pad = kernel // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))  # (N,C,H,W,k,k)
    n, c, h, w = x.shape
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h * w, c * kernel * kernel)


class Network:
    """Binds a ModelSpec to a parameter vector for forward/backward passes.

    Training-mode forwards update batch-norm running statistics in place in
    the bound vector; everything else is read-only. A Network instance is
    not safe for concurrent use (it keeps the tape of the last forward);
    independent devices must each build their own.
    """

    def __init__(self, model: ModelSpec, params: ParamVector):
        self.model = model
        self.plan = compiled(model)
        if params.layout != self.plan.entries:
            raise ConfigurationError("parameter layout does not match the model spec")
        self.params = params
        self._tape: list | None = None

    # -- forward -----------------------------------------------------------

    def forward_batch(
        self,
        x: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
        smooth: bool = False,
        keep_tape: bool = False,
        record_spikes: bool = False,
    ):
        """Run B samples of shape (T,P,H,W); returns logits (B, C)."""
        dtype = self.params.values.dtype
        x = np.asarray(x, dtype=dtype)
        if x.ndim != 5 or x.shape[2:] != tuple(self.model.input_shape):
            raise ConfigurationError(
                f"batch shape {x.shape} does not match input shape {self.model.input_shape}"
            )
        b, t = x.shape[:2]
        tape = [] if keep_tape else None
        spike_record: dict[int, np.ndarray] = {}

        out = x
        for i, (layer, _) in enumerate(self.plan.steps):
            tag = f"{i:02d}"
            if isinstance(layer, Conv2d):
                out = self._conv_forward(tag, layer, out, tape)
            elif isinstance(layer, BatchNorm):
                out = self._bn_forward(tag, out, train, tape)
            elif isinstance(layer, MaxPool2d):
                out = self._pool_forward(layer, out, tape)
            elif isinstance(layer, Linear):
                out = self._linear_forward(tag, layer, out, tape)
            elif isinstance(layer, Dropout):
                out = self._dropout_forward(layer, out, train, rng, tape)
            elif isinstance(layer, LIF):
                out = self._lif_forward(layer, out, smooth, tape)
                if record_spikes:
                    spike_record[i] = out.copy()
            elif isinstance(layer, Voting):
                pass  # applied after time averaging below

        rates = out.reshape(b, t, -1).mean(axis=1)  # firing rates over the window
        g = self.plan.voting_group
        logits = rates.reshape(b, -1, g).mean(axis=2) if g else rates
        if keep_tape:
            tape.append(("head", (b, t, out.shape[2:])))
            self._tape = tape
        if record_spikes:
            return logits, spike_record
        return logits

    def _conv_forward(self, tag, layer: Conv2d, x, tape):
        b, t = x.shape[:2]
        flat = x.reshape(b * t, *x.shape[2:])
        cols = _conv_cols(flat, layer.kernel)
        w = self.params.view(f"{tag}.conv2d.weight")
        bias = self.params.view(f"{tag}.conv2d.bias")
        y = cols @ w.reshape(layer.out_channels, -1).T + bias
        n, _, h, wd = flat.shape
        y = y.reshape(n, h, wd, layer.out_channels).transpose(0, 3, 1, 2)
        if tape is not None:
            tape.append(("conv", (tag, layer, cols, flat.shape)))
        return np.ascontiguousarray(y).reshape(b, t, layer.out_channels, h, wd)

    def _bn_forward(self, tag, x, train, tape):
        b, t, c = x.shape[:3]
        flat = x.reshape(b * t, *x.shape[2:])
        gamma = self.params.view(f"{tag}.batchnorm.gamma")
        beta = self.params.view(f"{tag}.batchnorm.beta")
        if train:
            mean = flat.mean(axis=(0, 2, 3))
            var = flat.var(axis=(0, 2, 3))
            n = flat.shape[0] * flat.shape[2] * flat.shape[3]
            # Running stats live in the parameter vector (zero gradient) so
            # they aggregate and checkpoint with everything else.
            rm = self.params.view(f"{tag}.batchnorm.running_mean")
            rv = self.params.view(f"{tag}.batchnorm.running_var")
            unbiased = var * (n / max(n - 1, 1))
            rm[...] = (1.0 - _BN_MOMENTUM) * rm + _BN_MOMENTUM * mean
            rv[...] = (1.0 - _BN_MOMENTUM) * rv + _BN_MOMENTUM * unbiased
        else:
            mean = self.params.view(f"{tag}.batchnorm.running_mean")
            var = self.params.view(f"{tag}.batchnorm.running_var")
        inv_std = 1.0 / np.sqrt(var + _BN_EPS)
        xhat = (flat - mean[:, None, None]) * inv_std[:, None, None]
        y = gamma[:, None, None] * xhat + beta[:, None, None]
        if tape is not None:
            tape.append(("bn", (tag, xhat, inv_std, train)))
        return y.reshape(x.shape)

    def _pool_forward(self, layer: MaxPool2d, x, tape):
        s = layer.size
        b, t, c, h, w = x.shape
        win = x.reshape(b * t, c, h // s, s, w // s, s).transpose(0, 1, 2, 4, 3, 5)
        win = win.reshape(b * t, c, h // s, w // s, s * s)
        idx = win.argmax(axis=-1)  # ties resolve to the first position
        y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        if tape is not None:
            tape.append(("pool", (layer, idx, x.shape)))
        return y.reshape(b, t, c, h // s, w // s)

    def _linear_forward(self, tag, layer: Linear, x, tape):
        b, t = x.shape[:2]
        flat = x.reshape(b * t, -1)
        w = self.params.view(f"{tag}.linear.weight")
        bias = self.params.view(f"{tag}.linear.bias")
        y = flat @ w.T + bias
        if tape is not None:
            tape.append(("linear", (tag, flat, x.shape)))
        return y.reshape(b, t, layer.out_features)

    def _dropout_forward(self, layer: Dropout, x, train, rng, tape):
        if not train or layer.p == 0.0:
            if tape is not None:
                tape.append(("identity", None))
            return x
        if rng is None:
            raise ConfigurationError("training-mode dropout needs an rng")
        keep = (rng.random(x.shape) >= layer.p).astype(x.dtype)
        scale = 1.0 / (1.0 - layer.p)
        if tape is not None:
            tape.append(("dropout", (keep, scale)))
        return x * keep * scale

    def _lif_forward(self, layer: LIF, x, smooth, tape):
        cfg = layer.cfg
        width = self.model.surrogate.width
        b, t = x.shape[:2]
        v = np.zeros((b,) + x.shape[2:], dtype=x.dtype)
        out = np.empty_like(x)
        u_tape = np.empty_like(x) if tape is not None else None
        gates = np.empty_like(x) if tape is not None else None
        for step in range(t):
            v_mid = v + (x[:, step] - v) / cfg.tau
            u = v_mid - cfg.threshold
            fired = u >= 0.0
            gate = 1.0 - fired.astype(x.dtype)
            out[:, step] = surrogate_sigmoid(u, width) if smooth else (1.0 - gate)
            v = v_mid * gate
            if tape is not None:
                u_tape[:, step] = u
                gates[:, step] = gate
        if tape is not None:
            tape.append(("lif", (cfg, width, u_tape, gates)))
        return out

    # -- loss and gradients --------------------------------------------------

    def loss_and_grad(
        self,
        x: np.ndarray,
        labels: np.ndarray,
        train: bool = True,
        rng: np.random.Generator | None = None,
        smooth: bool = False,
    ) -> tuple[float, ParamVector]:
        """Mean cross-entropy over the batch and its gradient."""
        logits = self.forward_batch(x, train=train, rng=rng, smooth=smooth, keep_tape=True)
        loss, glogits = _cross_entropy(logits, labels, self.model.num_classes)
        if not np.isfinite(loss):
            raise NumericError(
                f"non-finite loss {loss} on batch of {len(labels)} "
                f"(logit range [{logits.min():.3g}, {logits.max():.3g}])"
            )
        grad = zeros_like(self.params)
        self._backward(glogits, grad)
        return float(loss), grad

    def batch_loss(self, x, labels, train=False, rng=None, smooth=False) -> float:
        logits = self.forward_batch(x, train=train, rng=rng, smooth=smooth)
        loss, _ = _cross_entropy(logits, labels, self.model.num_classes)
        return float(loss)

    def _backward(self, glogits: np.ndarray, grad: ParamVector) -> None:
        tape = self._tape
        if tape is None:
            raise ConfigurationError("no forward tape; run forward with keep_tape")
        self._tape = None

        kind, (b, t, feat_shape) = tape.pop()
        assert kind == "head"
        g = self.plan.voting_group
        if g:
            grates = np.repeat(glogits / g, g, axis=1)
        else:
            grates = glogits
        gout = np.broadcast_to(
            (grates / t)[:, None, :], (b, t, grates.shape[1])
        ).reshape(b, t, *feat_shape)

        for kind, ctx in reversed(tape):
            if kind == "conv":
                gout = self._conv_backward(ctx, gout, grad)
            elif kind == "bn":
                gout = self._bn_backward(ctx, gout, grad)
            elif kind == "pool":
                gout = self._pool_backward(ctx, gout)
            elif kind == "linear":
                gout = self._linear_backward(ctx, gout, grad)
            elif kind == "dropout":
                keep, scale = ctx
                gout = gout * keep * scale
            elif kind == "lif":
                gout = self._lif_backward(ctx, gout)
            # "identity": pass through

    def _conv_backward(self, ctx, gy, grad):
        tag, layer, cols, in_shape = ctx
        b, t = gy.shape[:2]
        n, cin, h, w = in_shape
        k = layer.kernel
        pad = k // 2
        cout = layer.out_channels
        gflat = gy.reshape(n, cout, h, w).transpose(0, 2, 3, 1).reshape(n * h * w, cout)
        grad.view(f"{tag}.conv2d.weight")[...] += (gflat.T @ cols).reshape(cout, cin, k, k)
        grad.view(f"{tag}.conv2d.bias")[...] += gflat.sum(axis=0)
        # Input gradient: push column gradients back through the im2col
        # windows (fold), accumulating each kernel offset into the padded map.
        w_arr = self.params.view(f"{tag}.conv2d.weight")
        gcols = (gflat @ w_arr.reshape(cout, cin * k * k)).reshape(n, h, w, cin, k, k)
        gxp = np.zeros((n, cin, h + 2 * pad, w + 2 * pad), dtype=gy.dtype)
        for ky in range(k):
            for kx in range(k):
                gxp[:, :, ky : ky + h, kx : kx + w] += gcols[:, :, :, :, ky, kx].transpose(
                    0, 3, 1, 2
                )
        gx = gxp[:, :, pad : pad + h, pad : pad + w]
        return np.ascontiguousarray(gx).reshape(b, t, cin, h, w)

    def _bn_backward(self, ctx, gy, grad):
        tag, xhat, inv_std, train = ctx
        b, t = gy.shape[:2]
        gflat = gy.reshape(xhat.shape)
        gamma = self.params.view(f"{tag}.batchnorm.gamma")
        grad.view(f"{tag}.batchnorm.gamma")[...] += (gflat * xhat).sum(axis=(0, 2, 3))
        grad.view(f"{tag}.batchnorm.beta")[...] += gflat.sum(axis=(0, 2, 3))
        gxhat = gflat * gamma[:, None, None]
        if train:
            mean_g = gxhat.mean(axis=(0, 2, 3))
            mean_gx = (gxhat * xhat).mean(axis=(0, 2, 3))
            gx = inv_std[:, None, None] * (
                gxhat - mean_g[:, None, None] - xhat * mean_gx[:, None, None]
            )
        else:
            gx = gxhat * inv_std[:, None, None]
        return gx.reshape(gy.shape)

    def _pool_backward(self, ctx, gy):
        layer, idx, in_shape = ctx
        s = layer.size
        b, t, c, h, w = in_shape
        gwin = np.zeros((b * t, c, h // s, w // s, s * s), dtype=gy.dtype)
        np.put_along_axis(gwin, idx[..., None], gy.reshape(idx.shape)[..., None], axis=-1)
        gx = gwin.reshape(b * t, c, h // s, w // s, s, s).transpose(0, 1, 2, 4, 3, 5)
        return np.ascontiguousarray(gx).reshape(b, t, c, h, w)

    def _linear_backward(self, ctx, gy, grad):
        tag, flat, in_shape = ctx
        out_features = gy.shape[-1]
        gflat = gy.reshape(-1, out_features)
        grad.view(f"{tag}.linear.weight")[...] += gflat.T @ flat
        grad.view(f"{tag}.linear.bias")[...] += gflat.sum(axis=0)
        w = self.params.view(f"{tag}.linear.weight")
        return (gflat @ w).reshape(in_shape)

    def _lif_backward(self, ctx, gy):
        cfg, width, u_tape, gates = ctx
        t = gy.shape[1]
        gx = np.empty_like(gy)
        gv = np.zeros_like(gy[:, 0])
        decay = 1.0 - 1.0 / cfg.tau
        for step in range(t - 1, -1, -1):
            # Reset gate is constant under differentiation; only the decay
            # chain and the surrogate spike derivative carry gradient.
            gmid = gy[:, step] * surrogate_derivative(u_tape[:, step], width) + gv * gates[:, step]
            gx[:, step] = gmid / cfg.tau
            gv = gmid * decay
        return gx


def _cross_entropy(logits: np.ndarray, labels: np.ndarray, num_classes: int):
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ConfigurationError("label outside [0, num_classes)")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    b = logits.shape[0]
    picked = probs[np.arange(b), labels]
    loss = -np.log(np.maximum(picked, np.finfo(probs.dtype).tiny)).mean()
    gl = probs.copy()
    gl[np.arange(b), labels] -= 1.0
    return loss, gl / b


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)
