"""Desk-scale differentiable models with hand-derived gradients.

Three model families cover the simulator's needs: quadratic objectives with
exact curvature constants, (multinomial) logistic regression, and a one
hidden layer MLP. Loss and gradient evaluations broadcast over leading axes
so that all clients of a round can be processed in one vectorized call:
parameters of shape (..., d) combine with features of shape (..., m, p).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuadraticClientData",
    "QuadraticModel",
    "LogisticModel",
    "MlpModel",
    "SmoothnessInfo",
    "local_update",
    "compute_smoothness",
    "global_loss",
    "global_gradient",
]


# ---------------------------------------------------------------------------
# quadratic objectives


@dataclass(frozen=True)
class QuadraticClientData:
    """One client's quadratic objective 0.5 * w'Aw - b'w (A symmetric PSD)."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"A must be square, got shape {a.shape}")
        if b.shape != (a.shape[0],):
            raise ValueError(f"b must have shape ({a.shape[0]},), got {b.shape}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)


class QuadraticModel:
    """f(w) = 0.5 * w'Aw - b'w with client-specific (A, b) payloads."""

    is_classifier = False

    def __init__(self, dim: int, block_layout: list[int] | None = None):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim
        self.block_layout = list(block_layout) if block_layout else [dim]
        if sum(self.block_layout) != dim:
            raise ValueError(f"block layout {self.block_layout} does not sum to {dim}")

    def loss(self, w, a, b):
        w = np.asarray(w, dtype=float)
        aw = (np.asarray(a, dtype=float) @ w[..., None])[..., 0]
        value = 0.5 * np.sum(w * aw, axis=-1) - np.sum(np.asarray(b, dtype=float) * w, axis=-1)
        return float(value) if np.ndim(value) == 0 else value

    def gradient(self, w, a, b):
        w = np.asarray(w, dtype=float)
        return (np.asarray(a, dtype=float) @ w[..., None])[..., 0] - b

    def init_params(self, rng: np.random.Generator | None = None) -> np.ndarray:
        return np.zeros(self.dim)


# ---------------------------------------------------------------------------
# shared helpers for the sample-based classifiers


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log_softmax(z: np.ndarray) -> np.ndarray:
    zmax = np.max(z, axis=-1, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def _normalized_weights(y: np.ndarray, sample_weight) -> np.ndarray:
    """Per-sample weights that sum to one along the sample axis (or to zero
    for an all-padding batch)."""
    if sample_weight is None:
        m = y.shape[-1]
        return np.full(y.shape, 1.0 / m)
    sample_weight = np.asarray(sample_weight, dtype=float)
    total = np.clip(np.sum(sample_weight, axis=-1, keepdims=True), 1.0, None)
    return sample_weight / total


def _scalar_or_array(value: np.ndarray):
    return float(value) if np.ndim(value) == 0 else value


class LogisticModel:
    """Logistic regression: sigmoid for two classes, softmax beyond."""

    is_classifier = True

    def __init__(self, feature_dim: int, n_classes: int = 2, bias: bool = True):
        if feature_dim < 1 or n_classes < 2:
            raise ValueError("feature_dim must be >= 1 and n_classes >= 2")
        self.feature_dim = feature_dim
        self.n_classes = n_classes
        self.bias = bias
        if n_classes == 2:
            self.block_layout = [feature_dim] + ([1] if bias else [])
        else:
            self.block_layout = [feature_dim * n_classes] + ([n_classes] if bias else [])
        self.dim = sum(self.block_layout)

    def _binary_logits(self, w, x):
        p = self.feature_dim
        z = (x @ w[..., :p, None])[..., 0]
        if self.bias:
            z = z + w[..., p:][..., None, 0]
        return z

    def _softmax_logits(self, w, x):
        p, c = self.feature_dim, self.n_classes
        weights = w[..., : p * c].reshape(*w.shape[:-1], p, c)
        z = x @ weights
        if self.bias:
            z = z + w[..., p * c :][..., None, :]
        return z

    def loss(self, w, x, y, sample_weight=None):
        w = np.asarray(w, dtype=float)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y)
        wn = _normalized_weights(y, sample_weight)
        if self.n_classes == 2:
            z = self._binary_logits(w, x)
            yf = y.astype(float)
            ce = np.maximum(z, 0.0) - z * yf + np.log1p(np.exp(-np.abs(z)))
        else:
            logp = _log_softmax(self._softmax_logits(w, x))
            ce = -np.take_along_axis(logp, y[..., None].astype(int), axis=-1)[..., 0]
        return _scalar_or_array(np.sum(ce * wn, axis=-1))

    def gradient(self, w, x, y, sample_weight=None):
        w = np.asarray(w, dtype=float)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y)
        wn = _normalized_weights(y, sample_weight)
        p = self.feature_dim
        if self.n_classes == 2:
            z = self._binary_logits(w, x)
            r = (_sigmoid(z) - y.astype(float)) * wn
            gw = (r[..., None, :] @ x)[..., 0, :]
            if not self.bias:
                return gw
            gb = np.sum(r, axis=-1)[..., None]
            return np.concatenate([gw, gb], axis=-1)
        c = self.n_classes
        logits = self._softmax_logits(w, x)
        resid = np.exp(_log_softmax(logits))
        resid -= y[..., None] == np.arange(c)
        resid *= wn[..., None]
        gw = np.swapaxes(x, -1, -2) @ resid
        gw = gw.reshape(*gw.shape[:-2], p * c)
        if not self.bias:
            return gw
        gb = np.sum(resid, axis=-2)
        return np.concatenate([gw, gb], axis=-1)

    def predict(self, w, x) -> np.ndarray:
        if self.n_classes == 2:
            return (self._binary_logits(np.asarray(w, dtype=float), x) > 0.0).astype(int)
        return np.argmax(self._softmax_logits(np.asarray(w, dtype=float), x), axis=-1)

    def init_params(self, rng: np.random.Generator | None = None) -> np.ndarray:
        return np.zeros(self.dim)


class MlpModel:
    """One-hidden-layer MLP with hand-derived gradients.

    Two heads are available: softmax cross-entropy ("cross_entropy") and a
    squared-error head on the logits against one-hot targets
    ("squared_error"). The squared-error head has unbounded residuals, so it
    reproduces the gradient-explosion failure mode that saturating losses
    mask at small scale.
    """

    is_classifier = True

    def __init__(
        self,
        feature_dim: int,
        hidden_units: int,
        n_classes: int,
        activation: str = "relu",
        loss_kind: str = "cross_entropy",
    ):
        if feature_dim < 1 or hidden_units < 1 or n_classes < 2:
            raise ValueError("feature_dim, hidden_units >= 1 and n_classes >= 2 required")
        if activation not in ("relu", "tanh"):
            raise ValueError(f"activation must be 'relu' or 'tanh', got {activation!r}")
        if loss_kind not in ("cross_entropy", "squared_error"):
            raise ValueError(
                f"loss_kind must be 'cross_entropy' or 'squared_error', got {loss_kind!r}"
            )
        self.feature_dim = feature_dim
        self.hidden_units = hidden_units
        self.n_classes = n_classes
        self.activation = activation
        self.loss_kind = loss_kind
        p, h, c = feature_dim, hidden_units, n_classes
        self.block_layout = [p * h, h, h * c, c]
        self.dim = sum(self.block_layout)

    def _unpack(self, w):
        p, h, c = self.feature_dim, self.hidden_units, self.n_classes
        lead = w.shape[:-1]
        w1 = w[..., : p * h].reshape(*lead, p, h)
        b1 = w[..., p * h : p * h + h]
        w2 = w[..., p * h + h : p * h + h + h * c].reshape(*lead, h, c)
        b2 = w[..., p * h + h + h * c :]
        return w1, b1, w2, b2

    def _forward(self, w, x):
        w1, b1, w2, b2 = self._unpack(w)
        pre = x @ w1 + b1[..., None, :]
        hidden = np.maximum(pre, 0.0) if self.activation == "relu" else np.tanh(pre)
        logits = hidden @ w2 + b2[..., None, :]
        return pre, hidden, logits

    def loss(self, w, x, y, sample_weight=None):
        w = np.asarray(w, dtype=float)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y)
        wn = _normalized_weights(y, sample_weight)
        _, _, logits = self._forward(w, x)
        if self.loss_kind == "squared_error":
            resid = logits - (y[..., None] == np.arange(self.n_classes))
            per_sample = 0.5 * np.sum(resid**2, axis=-1)
        else:
            logp = _log_softmax(logits)
            per_sample = -np.take_along_axis(logp, y[..., None].astype(int), axis=-1)[..., 0]
        return _scalar_or_array(np.sum(per_sample * wn, axis=-1))

    def gradient(self, w, x, y, sample_weight=None):
        w = np.asarray(w, dtype=float)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y)
        wn = _normalized_weights(y, sample_weight)
        p, h, c = self.feature_dim, self.hidden_units, self.n_classes
        _, b1, w2, _ = self._unpack(w)
        pre, hidden, logits = self._forward(w, x)
        if self.loss_kind == "squared_error":
            resid = logits - (y[..., None] == np.arange(c)).astype(float)
        else:
            resid = np.exp(_log_softmax(logits))
            resid -= y[..., None] == np.arange(c)
        resid *= wn[..., None]
        gw2 = np.swapaxes(hidden, -1, -2) @ resid
        gb2 = np.sum(resid, axis=-2)
        dhidden = resid @ np.swapaxes(w2, -1, -2)
        if self.activation == "relu":
            dhidden = dhidden * (pre > 0.0)
        else:
            dhidden = dhidden * (1.0 - np.tanh(pre) ** 2)
        gw1 = np.swapaxes(x, -1, -2) @ dhidden
        gb1 = np.sum(dhidden, axis=-2)
        lead = w.shape[:-1]
        return np.concatenate(
            [
                gw1.reshape(*lead, p * h),
                gb1,
                gw2.reshape(*lead, h * c),
                gb2,
            ],
            axis=-1,
        )

    def predict(self, w, x) -> np.ndarray:
        _, _, logits = self._forward(np.asarray(w, dtype=float), np.asarray(x, dtype=float))
        return np.argmax(logits, axis=-1)

    def init_params(self, rng: np.random.Generator | None = None) -> np.ndarray:
        if rng is None:
            rng = np.random.default_rng(0)
        p, h, c = self.feature_dim, self.hidden_units, self.n_classes
        w1 = rng.normal(0.0, np.sqrt(2.0 / (p + h)), size=p * h)
        w2 = rng.normal(0.0, np.sqrt(2.0 / (h + c)), size=h * c)
        return np.concatenate([w1, np.zeros(h), w2, np.zeros(c)])


# ---------------------------------------------------------------------------
# local training and curvature constants


def _client_gradient(model, w, data):
    if isinstance(data, QuadraticClientData):
        return model.gradient(w, data.a, data.b)
    return model.gradient(w, data.x, data.y)


def _client_loss(model, w, data):
    if isinstance(data, QuadraticClientData):
        return model.loss(w, data.a, data.b)
    return model.loss(w, data.x, data.y)


def local_update(model, w, data, epochs, batch_size, lr, rng) -> np.ndarray:
    """Pseudo-gradient after `epochs` of local minibatch descent.

    The returned vector is the running sum of the minibatch gradients along
    the local trajectory, which equals (w - w_final) / lr by construction.
    With one epoch and a full batch it is exactly the local gradient (the
    shuffle is skipped whenever a batch covers the whole dataset), and a
    quadratic payload takes `epochs` full-gradient steps.
    """
    if epochs < 1 or batch_size < 1:
        raise ValueError("epochs and batch_size must be >= 1")
    w = np.asarray(w, dtype=float)
    grad_sum = np.zeros_like(w)
    w_local = w.copy()
    if isinstance(data, QuadraticClientData):
        for _ in range(epochs):
            g = model.gradient(w_local, data.a, data.b)
            grad_sum += g
            w_local -= lr * g
        return grad_sum
    m = len(data.y)
    if m == 0:
        raise ValueError("client dataset is empty")
    bs = min(batch_size, m)
    for _ in range(epochs):
        order = np.arange(m) if bs == m else rng.permutation(m)
        for start in range(0, m, bs):
            idx = order[start : start + bs]
            g = model.gradient(w_local, data.x[idx], data.y[idx])
            grad_sum += g
            w_local -= lr * g
    return grad_sum


def global_loss(model, w, client_datas) -> float:
    """Mean of the per-client empirical risks (clients weighted equally)."""
    return float(np.mean([_client_loss(model, w, d) for d in client_datas]))


def global_gradient(model, w, client_datas) -> np.ndarray:
    """Gradient of the client-averaged objective."""
    return np.mean([_client_gradient(model, w, d) for d in client_datas], axis=0)


@dataclass(frozen=True)
class SmoothnessInfo:
    """Smoothness constant L, gradient bound G (over a ball of the stated
    radius), and a lower bound on the objective. `certified` marks constants
    derived in closed form rather than sampled."""

    l: float
    g: float
    f_star: float
    radius: float
    certified: bool


def compute_smoothness(
    model,
    client_datas,
    radius: float,
    rng: np.random.Generator | None = None,
    n_probes: int = 200,
    f_star_steps: int = 500,
) -> SmoothnessInfo:
    """Curvature and gradient-bound constants over the ball ||w|| <= radius.

    Quadratic payloads give exact values: L is the top eigenvalue of the
    averaged A, G is bounded by max_n (lambda_max(A_n) * radius + ||b_n||),
    and f_star is evaluated at the exact minimizer. Other models are probed
    empirically: L from finite gradient differences at sampled points, G from
    the largest per-client gradient norm seen, f_star from a noiseless
    full-gradient descent run.
    """
    if not radius > 0.0:
        raise ValueError(f"radius must be positive, got {radius}")
    if isinstance(client_datas[0], QuadraticClientData):
        a_mean = np.mean([d.a for d in client_datas], axis=0)
        b_mean = np.mean([d.b for d in client_datas], axis=0)
        l = float(np.linalg.eigvalsh(a_mean)[-1])
        g = max(
            float(np.linalg.eigvalsh(d.a)[-1]) * radius + float(np.linalg.norm(d.b))
            for d in client_datas
        )
        w_star = np.linalg.solve(a_mean, b_mean)
        f_star = 0.5 * float(w_star @ a_mean @ w_star) - float(b_mean @ w_star)
        return SmoothnessInfo(l=l, g=g, f_star=f_star, radius=radius, certified=True)

    if rng is None:
        rng = np.random.default_rng(0)
    d = model.dim
    eps = 1e-4
    l_hat = 0.0
    g_hat = 0.0
    centers = [np.zeros(d)]
    for _ in range(n_probes - 1):
        direction = rng.normal(size=d)
        direction /= np.linalg.norm(direction)
        centers.append(rng.uniform(0.0, radius) * direction)
    for w in centers:
        grad_here = global_gradient(model, w, client_datas)
        step = rng.normal(size=d)
        step *= eps / np.linalg.norm(step)
        grad_there = global_gradient(model, w + step, client_datas)
        l_hat = max(l_hat, float(np.linalg.norm(grad_there - grad_here)) / eps)
        g_hat = max(
            g_hat,
            max(float(np.linalg.norm(_client_gradient(model, w, dd))) for dd in client_datas),
        )
    # Noiseless descent for an f_star estimate; step size backed off from 1/L.
    lr = 1.0 / max(l_hat, 1e-12)
    w = np.zeros(d)
    best = global_loss(model, w, client_datas)
    for _ in range(f_star_steps):
        w = w - lr * global_gradient(model, w, client_datas)
        best = min(best, global_loss(model, w, client_datas))
    return SmoothnessInfo(l=l_hat, g=g_hat, f_star=best, radius=radius, certified=False)
