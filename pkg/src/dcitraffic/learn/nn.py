"""MLP and 1-D CNN classifiers with hand-written backpropagation.

Inputs are batches of windows shaped (B, W, 2): W seconds of downlink and
uplink bit totals. All arithmetic is float64.
"""

from __future__ import annotations

import copy

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import BadSimplex, WindowTooShort

LEAKY_ALPHA = 0.1
PROB_FLOOR = 1e-12
KERNEL = 5
POOL = 3


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def leaky_relu(z, alpha=LEAKY_ALPHA):
    return np.where(z > 0, z, alpha * z)


def cross_entropy(probs, target: int) -> float:
    """-log(probs[target]) for one probability vector.

    Probabilities are clamped to [1e-12, 1] before the log.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or abs(p.sum() - 1.0) > 1e-9 or np.any(p < 0):
        raise BadSimplex("probabilities must be non-negative and sum to 1")
    return float(-np.log(np.clip(p[target], PROB_FLOOR, 1.0)))


def batch_cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    """Summed categorical cross-entropy over a batch."""
    p = probs[np.arange(len(targets)), targets]
    return float(-np.log(np.clip(p, PROB_FLOOR, 1.0)).sum())


def conv1d(signal, kernel, bias=0.0) -> np.ndarray:
    """Valid 1-D correlation: out[i] = bias + sum_j kernel[j] * signal[i + j]."""
    signal = np.asarray(signal, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if len(signal) < len(kernel):
        raise WindowTooShort(f"signal of length {len(signal)} shorter than kernel")
    return sliding_window_view(signal, len(kernel)) @ kernel + bias


def maxpool1d(signal, width: int = POOL, stride: int = POOL) -> np.ndarray:
    signal = np.asarray(signal, dtype=np.float64)
    n = (len(signal) - width) // stride + 1 if len(signal) >= width else 0
    return np.array([signal[i * stride:i * stride + width].max() for i in range(n)])


def _pool_forward(x: np.ndarray):
    """Non-overlapping max pool of width 3 over the last axis."""
    p = x.shape[-1] // POOL
    blocks = x[..., :p * POOL].reshape(*x.shape[:-1], p, POOL)
    idx = blocks.argmax(axis=-1)
    return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0], idx


def _pool_backward(dout: np.ndarray, idx: np.ndarray, length: int) -> np.ndarray:
    p = dout.shape[-1]
    dblocks = np.zeros((*dout.shape, POOL))
    np.put_along_axis(dblocks, idx[..., None], dout[..., None], axis=-1)
    dx = np.zeros((*dout.shape[:-1], length))
    dx[..., :p * POOL] = dblocks.reshape(*dout.shape[:-1], p * POOL)
    return dx


def _glorot(rng, fan_in, fan_out, shape):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def logit_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    """Summed cross-entropy of softmax(logits), evaluated without forming probabilities.

    With d_j = z_j - z_y over the other classes and m = max(0, max_j d_j),
    the loss is m + log(exp(-m) + sum_j exp(d_j - m)); when the target
    logit is the largest this is log1p(sum_j exp(d_j)), which keeps full
    relative precision for confidently correct outputs.
    """
    z = np.asarray(logits, dtype=np.float64)
    rows = np.arange(len(targets))
    d = z - z[rows, targets][:, None]
    d[rows, targets] = -np.inf
    m = np.maximum(d.max(axis=1), 0.0)
    s = np.exp(d - m[:, None]).sum(axis=1)
    per = np.where(m > 0, m + np.log(np.exp(-m) + s), np.log1p(s))
    return float(per.sum())


class NeuralNet:
    """Shared plumbing: named parameters, prediction and copying."""

    kind = ""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def forward(self, X) -> np.ndarray:
        return softmax(self._forward(self._check(X))[0])

    def predict(self, X) -> np.ndarray:
        return self.forward(X).argmax(axis=1)

    def predict_proba(self, X) -> np.ndarray:
        return self.forward(X)

    def loss(self, X, y) -> float:
        logits = self._forward(self._check(X))[0]
        return logit_cross_entropy(logits, np.asarray(y, dtype=np.int64)) / len(y)

    def loss_and_grads(self, X, y) -> tuple[float, dict[str, np.ndarray]]:
        """Mean cross-entropy over the batch and its exact gradients."""
        X = self._check(X)
        y = np.asarray(y, dtype=np.int64)
        logits, cache = self._forward(X)
        loss = logit_cross_entropy(logits, y) / len(y)
        dlogits = softmax(logits)
        dlogits[np.arange(len(y)), y] -= 1.0
        dlogits /= len(y)
        return loss, self._backward(dlogits, cache)

    def copy(self):
        return copy.deepcopy(self)

    def zero_(self):
        for p in self.params.values():
            p[...] = 0.0
        return self


class MlpModel(NeuralNet):
    """Fully connected W*2 -> 128 -> 64 -> K with leaky-ReLU hidden layers."""

    kind = "mlp"

    def __init__(self, w: int, n_classes: int, hidden=(128, 64), alpha=LEAKY_ALPHA, seed=0):
        super().__init__()
        self.w, self.n_classes, self.hidden = w, n_classes, tuple(hidden)
        self.alpha, self.seed = alpha, seed
        rng = np.random.default_rng(seed)
        sizes = [2 * w, *self.hidden, n_classes]
        for i, (a, b) in enumerate(zip(sizes, sizes[1:]), start=1):
            self.params[f"W{i}"] = _glorot(rng, a, b, (a, b))
            self.params[f"b{i}"] = np.zeros(b)

    def arch(self) -> dict:
        return {"type": "mlp", "w": self.w, "d": 2, "k": self.n_classes,
                "hidden": list(self.hidden), "alpha": self.alpha, "seed": self.seed}

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        if X.shape[1:] != (self.w, 2):
            raise ValueError(f"expected windows of shape ({self.w}, 2), got {X.shape[1:]}")
        return X

    def _forward(self, X):
        n_layers = len(self.hidden) + 1
        a = X.reshape(len(X), -1)
        acts, pre = [a], []
        for i in range(1, n_layers + 1):
            z = a @ self.params[f"W{i}"] + self.params[f"b{i}"]
            pre.append(z)
            if i < n_layers:
                a = leaky_relu(z, self.alpha)
                acts.append(a)
        return z, (acts, pre)

    def _backward(self, dlogits, cache):
        acts, pre = cache
        n_layers = len(pre)
        grads = {}
        dz = dlogits
        for i in range(n_layers, 0, -1):
            grads[f"W{i}"] = acts[i - 1].T @ dz
            grads[f"b{i}"] = dz.sum(axis=0)
            if i > 1:
                da = dz @ self.params[f"W{i}"].T
                dz = da * np.where(pre[i - 2] > 0, 1.0, self.alpha)
        return {k: grads[k] for k in self.params}


def cnn_shapes(w: int) -> tuple[int, int, int, int]:
    """(conv1 length, pool1 length, conv2 length, pool2 length) for window ``w``."""
    l1 = w - KERNEL + 1
    p1 = max(l1, 0) // POOL
    l2 = p1 - KERNEL + 1
    p2 = max(l2, 0) // POOL
    return l1, p1, l2, p2


def min_cnn_window() -> int:
    w = KERNEL
    while cnn_shapes(w)[3] < 1:
        w += 1
    return w


class CnnModel(NeuralNet):
    """Two conv(1x5)+maxpool(1x3) stages, then FC(32, leaky-ReLU) and FC(K, softmax).

    Stage 1 filters the DL and UL rows separately with shared linear
    kernels; stage 2 convolves across all 2*n_conv1 feature rows with tanh.
    """

    kind = "cnn"

    def __init__(self, w: int, n_classes: int, n_conv1=32, n_conv2=64, n_fc=32,
                 alpha=LEAKY_ALPHA, seed=0):
        super().__init__()
        l1, p1, l2, p2 = cnn_shapes(w)
        if p2 < 1:
            raise WindowTooShort(f"W={w} leaves no positions after two conv/pool stages "
                                 f"(minimum {min_cnn_window()})")
        self.w, self.n_classes = w, n_classes
        self.n_conv1, self.n_conv2, self.n_fc = n_conv1, n_conv2, n_fc
        self.alpha, self.seed = alpha, seed
        rng = np.random.default_rng(seed)
        c1, c2 = n_conv1, n_conv2
        self.params["k1"] = _glorot(rng, KERNEL, c1 * KERNEL, (c1, KERNEL))
        self.params["b1"] = np.zeros(c1)
        fan = 2 * c1 * KERNEL
        self.params["k2"] = _glorot(rng, fan, c2 * KERNEL, (c2, 2 * c1, KERNEL))
        self.params["b2"] = np.zeros(c2)
        flat = c2 * p2
        self.params["W3"] = _glorot(rng, flat, n_fc, (flat, n_fc))
        self.params["b3"] = np.zeros(n_fc)
        self.params["W4"] = _glorot(rng, n_fc, n_classes, (n_fc, n_classes))
        self.params["b4"] = np.zeros(n_classes)

    def arch(self) -> dict:
        return {"type": "cnn", "w": self.w, "d": 2, "k": self.n_classes,
                "conv": [self.n_conv1, self.n_conv2], "fc": self.n_fc,
                "kernel": KERNEL, "pool": POOL, "alpha": self.alpha, "seed": self.seed}

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        if X.shape[1:] != (self.w, 2):
            raise ValueError(f"expected windows of shape ({self.w}, 2), got {X.shape[1:]}")
        return X

    def _forward(self, X):
        p = self.params
        B = len(X)
        x = X.transpose(0, 2, 1)  # (B, 2, W)
        cols1 = sliding_window_view(x, KERNEL, axis=2)  # (B, 2, L1, 5)
        z1 = np.einsum("bdlj,fj->bdfl", cols1, p["k1"]) + p["b1"][None, None, :, None]
        h1, idx1 = _pool_forward(z1)  # (B, 2, C1, P1)
        h1f = h1.reshape(B, 2 * self.n_conv1, -1)
        cols2 = sliding_window_view(h1f, KERNEL, axis=2)  # (B, 2C1, L2, 5)
        cols2 = cols2.transpose(0, 2, 1, 3).reshape(B, cols2.shape[2], -1)  # (B, L2, 2C1*5)
        k2f = p["k2"].reshape(self.n_conv2, -1)
        z2 = (cols2 @ k2f.T + p["b2"]).transpose(0, 2, 1)  # (B, C2, L2)
        a2 = np.tanh(z2)
        h2, idx2 = _pool_forward(a2)  # (B, C2, P2)
        flat = h2.reshape(B, -1)
        z3 = flat @ p["W3"] + p["b3"]
        a3 = leaky_relu(z3, self.alpha)
        logits = a3 @ p["W4"] + p["b4"]
        cache = (cols1, z1.shape, idx1, h1f.shape, cols2, a2, idx2, flat, z3, a3)
        return logits, cache

    def _backward(self, dlogits, cache):
        cols1, z1_shape, idx1, h1f_shape, cols2, a2, idx2, flat, z3, a3 = cache
        p = self.params
        B = len(dlogits)
        g = {}
        g["W4"] = a3.T @ dlogits
        g["b4"] = dlogits.sum(axis=0)
        dz3 = (dlogits @ p["W4"].T) * np.where(z3 > 0, 1.0, self.alpha)
        g["W3"] = flat.T @ dz3
        g["b3"] = dz3.sum(axis=0)
        dh2 = (dz3 @ p["W3"].T).reshape(B, self.n_conv2, -1)
        da2 = _pool_backward(dh2, idx2, a2.shape[-1])
        dz2 = da2 * (1.0 - a2 * a2)  # (B, C2, L2)
        dz2t = dz2.transpose(0, 2, 1)  # (B, L2, C2)
        g["k2"] = np.einsum("blo,blk->ok", dz2t, cols2).reshape(p["k2"].shape)
        g["b2"] = dz2.sum(axis=(0, 2))
        dcols2 = (dz2t @ p["k2"].reshape(self.n_conv2, -1)).reshape(
            B, -1, 2 * self.n_conv1, KERNEL)  # (B, L2, 2C1, 5)
        dh1f = np.zeros(h1f_shape)
        for j in range(KERNEL):
            dh1f[:, :, j:j + dcols2.shape[1]] += dcols2[:, :, :, j].transpose(0, 2, 1)
        dh1 = dh1f.reshape(B, 2, self.n_conv1, -1)
        dz1 = _pool_backward(dh1, idx1, z1_shape[-1])  # (B, 2, C1, L1)
        g["k1"] = np.einsum("bdfl,bdlj->fj", dz1, cols1)
        g["b1"] = dz1.sum(axis=(0, 1, 3))
        return {k: g[k] for k in self.params}

    def stage_shapes(self) -> dict[str, int]:
        l1, p1, l2, p2 = cnn_shapes(self.w)
        return {"conv1": l1, "pool1": p1, "conv2": l2, "pool2": p2}


def forward_mlp(model: MlpModel, x) -> np.ndarray:
    out = model.forward(x)
    return out[0] if np.asarray(x).ndim == 2 else out


def forward_cnn(model: CnnModel, x) -> np.ndarray:
    out = model.forward(x)
    return out[0] if np.asarray(x).ndim == 2 else out


def backprop_gradients(model: NeuralNet, X, y) -> dict[str, np.ndarray]:
    return model.loss_and_grads(X, y)[1]


def numerical_gradients(model: NeuralNet, X, y, h=1e-5, names=None, coords=None, rng=None):
    """Central finite differences of the mean loss.

    ``coords`` limits each named tensor to that many randomly chosen entries
    (all entries when None). Returns {name: (flat_indices, values)}.
    """
    out = {}
    for name in names or list(model.params):
        p = model.params[name]
        flat = p.reshape(-1)
        if coords is None or coords >= flat.size:
            idx = np.arange(flat.size)
        else:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, coords, replace=False)
        vals = np.empty(len(idx))
        for n, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            lp = model.loss(X, y)
            flat[i] = old - h
            lm = model.loss(X, y)
            flat[i] = old
            vals[n] = (lp - lm) / (2 * h)
        out[name] = (idx, vals)
    return out
