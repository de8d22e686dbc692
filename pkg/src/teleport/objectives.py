"""Objective zoo with exact value / gradient / Hessian-vector-product evaluation.

Every objective exposes ``value``, ``grad`` and ``hvp`` plus a smoothness
estimate ``smoothness()``.  Finite-difference oracles (``fd_gradient`` and
``fd_hvp``) provide an independent check of the analytic derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonFiniteError(RuntimeError):
    """An evaluation produced NaN or Inf."""


def _as_point(w, dim: int) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (dim,):
        raise ValueError(f"expected point of dimension {dim}, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise NonFiniteError("point contains NaN or Inf")
    return w


def _finite(x, what: str):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} is not finite")
    return x


def sigmoid(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log1pexp(z):
    """log(1 + exp(z)) without overflow: max(z, 0) + log1p(exp(-|z|))."""
    z = np.asarray(z, dtype=float)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


@dataclass
class Dataset:
    """A supervised dataset: n x p features and n labels.

    Binary labels are stored in {-1, +1}; multiclass labels are class
    indices 0..C-1.
    """

    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    standardized: bool = False

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-d array")
        n, p = self.features.shape
        if n < 1 or p < 1:
            raise ValueError("dataset needs at least one row and one feature")
        if not np.all(np.isfinite(self.features)):
            raise ValueError(f"dataset {self.name!r} has non-finite features")
        self.labels = np.asarray(self.labels)
        if self.labels.shape != (n,):
            raise ValueError("labels must be one value per row")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def binary(self) -> bool:
        return self.labels.dtype.kind == "f"

    @property
    def n_classes(self) -> int:
        if self.binary:
            return 2
        return int(self.labels.max()) + 1

    def standardize(self) -> "Dataset":
        """Per-feature mean 0 / variance 1 copy (constant columns left at 0)."""
        x = self.features
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        return Dataset((x - mu) / sd, self.labels.copy(), self.name, standardized=True)


class Objective:
    """Base class: a differentiable function R^d -> R."""

    dim: int
    convex: bool = False

    def value(self, w) -> float:
        raise NotImplementedError

    def grad(self, w) -> np.ndarray:
        raise NotImplementedError

    def hvp(self, w, v) -> np.ndarray:
        raise NotImplementedError

    def smoothness(self, w=None) -> float:
        """Estimate of the gradient Lipschitz constant L.

        Exact for quadratics, an analytic bound for logistic regression, and
        a local power-iteration estimate at ``w`` otherwise.
        """
        return power_iteration_l(self, w)

    def _point(self, w) -> np.ndarray:
        return _as_point(w, self.dim)


def power_iteration_l(obj: Objective, w=None, iters: int = 200) -> float:
    """Largest Hessian eigenvalue at ``w`` by power iteration on HVPs."""
    if w is None:
        w = np.zeros(obj.dim)
    w = np.asarray(w, dtype=float)
    # deterministic, non-degenerate start direction
    v = np.cos(np.arange(obj.dim) + 1.0)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        hv = obj.hvp(w, v)
        nrm = np.linalg.norm(hv)
        if nrm <= 1e-300:
            return 0.0
        lam = float(v @ hv)
        v = hv / nrm
    return abs(lam)


class Quadratic(Objective):
    """f(w) = 1/2 w^T H w + c^T w with symmetric PSD H."""

    convex = True

    def __init__(self, h, c=None):
        h = np.asarray(h, dtype=float)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("H must be square")
        scale = max(np.abs(h).max(), 1.0)
        if np.abs(h - h.T).max() > 1e-12 * scale:
            raise ValueError("H must be symmetric to 1e-12 relative tolerance")
        eigs = np.linalg.eigvalsh(h)
        if eigs.min() < -1e-10 * scale:
            raise ValueError("H must be positive semi-definite")
        self.h = 0.5 * (h + h.T)
        self.dim = h.shape[0]
        self.c = np.zeros(self.dim) if c is None else np.asarray(c, dtype=float)
        if self.c.shape != (self.dim,):
            raise ValueError("c must match the dimension of H")

    def value(self, w) -> float:
        w = self._point(w)
        return float(0.5 * w @ (self.h @ w) + self.c @ w)

    def grad(self, w) -> np.ndarray:
        w = self._point(w)
        return self.h @ w + self.c

    def hvp(self, w, v) -> np.ndarray:
        self._point(w)
        v = _as_point(v, self.dim)
        return self.h @ v

    def smoothness(self, w=None) -> float:
        return power_iteration_l(self, np.zeros(self.dim))


class Booth(Objective):
    """Booth test function, a convex quadratic with minimum 0 at (1, 3)."""

    dim = 2
    convex = True
    # constant Hessian of (x + 2y - 7)^2 + (2x + y - 5)^2
    _h = np.array([[10.0, 8.0], [8.0, 10.0]])

    def value(self, w) -> float:
        x, y = self._point(w)
        return float((x + 2 * y - 7) ** 2 + (2 * x + y - 5) ** 2)

    def grad(self, w) -> np.ndarray:
        x, y = self._point(w)
        a = x + 2 * y - 7
        b = 2 * x + y - 5
        return np.array([2 * a + 4 * b, 4 * a + 2 * b])

    def hvp(self, w, v) -> np.ndarray:
        self._point(w)
        v = _as_point(v, 2)
        return self._h @ v

    def smoothness(self, w=None) -> float:
        return 18.0  # max eigenvalue of the constant Hessian


class GoldsteinPrice(Objective):
    """Goldstein-Price test function; non-convex, global minimum 3 at (0, -1)."""

    dim = 2
    convex = False

    @staticmethod
    def _parts(x, y):
        u = x + y + 1.0
        p = 19 - 14 * x + 3 * x * x - 14 * y + 6 * x * y + 3 * y * y
        a = 1.0 + u * u * p
        v = 2 * x - 3 * y
        q = 18 - 32 * x + 12 * x * x + 48 * y - 36 * x * y + 27 * y * y
        b = 30.0 + v * v * q
        return u, p, a, v, q, b

    def value(self, w) -> float:
        x, y = self._point(w)
        _, _, a, _, _, b = self._parts(x, y)
        return float(a * b)

    def _grad_parts(self, x, y):
        u, p, a, v, q, b = self._parts(x, y)
        px = -14 + 6 * x + 6 * y  # note p_x == p_y
        ax = 2 * u * p + u * u * px
        ay = ax
        qx = -32 + 24 * x - 36 * y
        qy = 48 - 36 * x + 54 * y
        bx = 4 * v * q + v * v * qx
        by = -6 * v * q + v * v * qy
        return u, p, a, v, q, b, px, ax, ay, qx, qy, bx, by

    def grad(self, w) -> np.ndarray:
        x, y = self._point(w)
        _, _, a, _, _, b, _, ax, ay, _, _, bx, by = self._grad_parts(x, y)
        return np.array([ax * b + a * bx, ay * b + a * by])

    def hessian(self, w) -> np.ndarray:
        x, y = self._point(w)
        u, p, a, v, q, b, px, ax, ay, qx, qy, bx, by = self._grad_parts(x, y)
        # second partials of the polynomial factors (p_ij = 6, q constant curvature)
        a_ij = 2 * p + 4 * u * px + 6 * u * u  # equal for xx, xy, yy
        axx = axy = ayy = a_ij
        bxx = 8 * q + 8 * v * qx + 24 * v * v
        bxy = -12 * q + 2 * v * (2 * qy - 3 * qx) + v * v * (-36)
        byy = 18 * q - 12 * v * qy + 54 * v * v
        fxx = axx * b + 2 * ax * bx + a * bxx
        fxy = axy * b + ax * by + ay * bx + a * bxy
        fyy = ayy * b + 2 * ay * by + a * byy
        return np.array([[fxx, fxy], [fxy, fyy]])

    def hvp(self, w, v) -> np.ndarray:
        v = _as_point(v, 2)
        return self.hessian(w) @ v


def h2(x):
    """Second-order Huber: quartic on |x| < 1, |x| outside; C^2 and convex."""
    x = np.asarray(x, dtype=float)
    inner = np.abs(x) < 1.0
    return np.where(inner, -x**4 / 8 + 0.75 * x * x + 0.375, np.abs(x))


def h2_prime(x):
    x = np.asarray(x, dtype=float)
    inner = np.abs(x) < 1.0
    return np.where(inner, -0.5 * x**3 + 1.5 * x, np.sign(x))


def h2_double_prime(x):
    x = np.asarray(x, dtype=float)
    inner = np.abs(x) < 1.0
    return np.where(inner, 1.5 * (1.0 - x * x), 0.0)


class H2Chain(Objective):
    """Separable sum of second-order Huber terms.

    ``f(x) = sum_{i < active} h2(x_i)`` embedded in R^d.  With
    ``active < d`` the trailing coordinates are inert, which makes the
    gradient-norm maximizer over any sub-level set coincide with the start
    point (the teleportation operator becomes the identity).
    """

    convex = True

    def __init__(self, d: int, active: int | None = None):
        if d < 1:
            raise ValueError("dimension must be >= 1")
        self.dim = int(d)
        self.active = self.dim if active is None else int(active)
        if not 1 <= self.active <= self.dim:
            raise ValueError("active coordinate count must be in [1, d]")

    def value(self, w) -> float:
        w = self._point(w)
        return float(np.sum(h2(w[: self.active])))

    def grad(self, w) -> np.ndarray:
        w = self._point(w)
        g = np.zeros(self.dim)
        g[: self.active] = h2_prime(w[: self.active])
        return g

    def hvp(self, w, v) -> np.ndarray:
        w = self._point(w)
        v = _as_point(v, self.dim)
        out = np.zeros(self.dim)
        out[: self.active] = h2_double_prime(w[: self.active]) * v[: self.active]
        return out

    def smoothness(self, w=None) -> float:
        return 1.5  # max of h2'' attained at 0


def huber(x, delta):
    """Classic Huber: quadratic inside |x| <= delta, linear outside."""
    x = np.asarray(x, dtype=float)
    inner = np.abs(x) <= delta
    return np.where(inner, 0.5 * x * x, delta * (np.abs(x) - 0.5 * delta))


def huber_prime(x, delta):
    x = np.asarray(x, dtype=float)
    inner = np.abs(x) <= delta
    return np.where(inner, x, delta * np.sign(x))


def huber_double_prime(x, delta):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) <= delta, 1.0, 0.0)


class DistanceCounterexample(Objective):
    """f(x, y) = huber_1(x) + huber_eps(y) + 1/2 [y >= alpha] (y - alpha)^2.

    Convex and smooth; teleporting from suitable starts moves the iterate a
    constant fraction of the sub-level-set diameter away from the minimizer.
    """

    dim = 2
    convex = True

    def __init__(self, eps: float, alpha: float):
        if not eps > 0 or not alpha > 0:
            raise ValueError("eps and alpha must be positive")
        if eps >= alpha:
            raise ValueError("eps must be smaller than alpha")
        self.eps = float(eps)
        self.alpha = float(alpha)

    def value(self, w) -> float:
        x, y = self._point(w)
        tail = 0.5 * (y - self.alpha) ** 2 if y >= self.alpha else 0.0
        return float(huber(x, 1.0) + huber(y, self.eps) + tail)

    def grad(self, w) -> np.ndarray:
        x, y = self._point(w)
        gy = huber_prime(y, self.eps) + (y - self.alpha if y >= self.alpha else 0.0)
        return np.array([float(huber_prime(x, 1.0)), float(gy)])

    def hvp(self, w, v) -> np.ndarray:
        x, y = self._point(w)
        v = _as_point(v, 2)
        hxx = huber_double_prime(x, 1.0)
        hyy = huber_double_prime(y, self.eps) + (1.0 if y >= self.alpha else 0.0)
        return np.array([float(hxx) * v[0], float(hyy) * v[1]])

    def smoothness(self, w=None) -> float:
        return 1.0  # diagonal Hessian entries are 0 or 1 (branches never overlap)


class LogisticRegression(Objective):
    """L2-regularized binary logistic regression on labels in {-1, +1}.

    f(w) = (1/n) sum_i log(1 + exp(-y_i <x_i, w>)) + (lam/2) ||w||^2
    """

    convex = True

    def __init__(self, data: Dataset, lam: float = 0.0):
        if lam < 0:
            raise ValueError("weight decay must be non-negative")
        if not data.binary:
            raise ValueError("logistic regression needs binary labels in {-1,+1}")
        self.data = data
        self.lam = float(lam)
        self.dim = data.p

    def _margins(self, w, idx=None):
        x = self.data.features if idx is None else self.data.features[idx]
        y = self.data.labels if idx is None else self.data.labels[idx]
        return x, y, y * (x @ w)

    def value(self, w, idx=None) -> float:
        w = self._point(w)
        _, _, z = self._margins(w, idx)
        loss = float(np.mean(log1pexp(-z)))
        return _finite(loss + 0.5 * self.lam * float(w @ w), "logistic loss")

    def grad(self, w, idx=None) -> np.ndarray:
        w = self._point(w)
        x, y, z = self._margins(w, idx)
        coeff = -y * sigmoid(-z) / x.shape[0]
        return x.T @ coeff + self.lam * w

    def hvp(self, w, v, idx=None) -> np.ndarray:
        w = self._point(w)
        v = _as_point(v, self.dim)
        x, _, z = self._margins(w, idx)
        s = sigmoid(z) * sigmoid(-z)
        return x.T @ (s * (x @ v)) / x.shape[0] + self.lam * v

    def smoothness(self, w=None) -> float:
        x = self.data.features
        return float(np.linalg.norm(x, 2) ** 2 / (4 * x.shape[0]) + self.lam)


def _softplus(z):
    return log1pexp(z)


def _softplus_prime(z):
    return sigmoid(z)


def _softplus_double_prime(z):
    s = sigmoid(z)
    return s * (1.0 - s)


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_prime(z):
    # derivative at 0 defined as 0 for deterministic evaluation
    return (z > 0).astype(float)


_ACTIVATIONS = {
    "softplus": (_softplus, _softplus_prime, _softplus_double_prime),
    "relu": (_relu, _relu_prime, lambda z: np.zeros_like(z)),
}


class MLP(Objective):
    """Fully-connected network without biases, trained on a Dataset.

    Binary (+/-1) labels use the logistic loss on a single output; class
    index labels use multiclass cross-entropy.  The HVP is computed with the
    Pearlmutter forward-over-reverse construction and never materializes the
    Hessian.  With zero weight decay and the (positively homogeneous) ReLU
    activation the objective is not coercive, which ``coercive`` reflects.
    """

    def __init__(self, layers, activation: str, data: Dataset, lam: float = 0.0):
        if lam < 0:
            raise ValueError("weight decay must be non-negative")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        layers = tuple(int(s) for s in layers)
        if len(layers) < 2 or any(s < 1 for s in layers):
            raise ValueError("layers must list at least input and output sizes")
        if layers[0] != data.p:
            raise ValueError("first layer size must equal the feature count")
        out = 1 if data.binary else data.n_classes
        if layers[-1] != out:
            raise ValueError(f"last layer size must be {out} for this dataset")
        self.layers = layers
        self.activation = activation
        self.data = data
        self.lam = float(lam)
        self.shapes = [(layers[i], layers[i + 1]) for i in range(len(layers) - 1)]
        self.dim = sum(a * b for a, b in self.shapes)
        self.coercive = self.lam > 0 or activation == "softplus"

    # -- parameter packing -------------------------------------------------

    def unpack(self, w) -> list[np.ndarray]:
        w = self._point(w)
        mats, off = [], 0
        for a, b in self.shapes:
            mats.append(w[off : off + a * b].reshape(a, b))
            off += a * b
        return mats

    def pack(self, mats) -> np.ndarray:
        return np.concatenate([m.ravel() for m in mats])

    def init_params(self, seed: int = 0) -> np.ndarray:
        """Fan-in-scaled Gaussian (Kaiming-style) initialization."""
        rng = np.random.default_rng(seed)
        mats = [rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b)) for a, b in self.shapes]
        return self.pack(mats)

    def rescale_first_pair(self, w, alpha: float) -> np.ndarray:
        """Map (W1, W2) -> (W1/alpha, alpha*W2), an output-preserving rescaling
        for positively homogeneous activations."""
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        mats = self.unpack(w)
        mats[0] = mats[0] / alpha
        mats[1] = mats[1] * alpha
        return self.pack(mats)

    # -- evaluation --------------------------------------------------------

    def _forward(self, mats, idx=None):
        act, _, _ = _ACTIVATIONS[self.activation]
        a = self.data.features if idx is None else self.data.features[idx]
        pre, post = [], [a]
        for wl in mats[:-1]:
            z = a @ wl
            pre.append(z)
            a = act(z)
            post.append(a)
        logits = a @ mats[-1]
        return pre, post, logits

    def predict(self, w) -> np.ndarray:
        """Raw network outputs (logits) on the training inputs."""
        return self._forward(self.unpack(w))[2]

    def _loss_terms(self, logits, idx=None):
        """Mean loss and d(loss)/d(logits), both scaled by 1/n."""
        labels = self.data.labels if idx is None else self.data.labels[idx]
        n = logits.shape[0]
        if self.data.binary:
            y = labels[:, None]
            z = y * logits
            loss = float(np.sum(log1pexp(-z))) / n
            dl = -y * sigmoid(-z) / n
        else:
            m = logits.max(axis=1, keepdims=True)
            lse = m + np.log(np.sum(np.exp(logits - m), axis=1, keepdims=True))
            picked = logits[np.arange(n), labels]
            loss = float(np.sum(lse.ravel() - picked)) / n
            probs = np.exp(logits - lse)
            dl = probs.copy()
            dl[np.arange(n), labels] -= 1.0
            dl /= n
        return loss, dl

    def value(self, w, idx=None) -> float:
        w = self._point(w)
        mats = self.unpack(w)
        _, _, logits = self._forward(mats, idx)
        loss, _ = self._loss_terms(logits, idx)
        return _finite(loss + 0.5 * self.lam * float(w @ w), "network loss")

    def grad(self, w, idx=None) -> np.ndarray:
        w = self._point(w)
        mats = self.unpack(w)
        _, dact, _ = _ACTIVATIONS[self.activation]
        pre, post, logits = self._forward(mats, idx)
        _, delta = self._loss_terms(logits, idx)
        grads = [None] * len(mats)
        grads[-1] = post[-1].T @ delta
        for l in range(len(mats) - 2, -1, -1):
            delta = (delta @ mats[l + 1].T) * dact(pre[l])
            grads[l] = post[l].T @ delta
        return self.pack(grads) + self.lam * w

    def hvp(self, w, v) -> np.ndarray:
        w = self._point(w)
        v = _as_point(v, self.dim)
        mats = self.unpack(w)
        vmats = self.unpack(v)
        _, dact, ddact = _ACTIVATIONS[self.activation]

        # forward and directional (R-) forward passes
        pre, post, logits = self._forward(mats)
        ra = np.zeros_like(post[0])
        rpre, rpost = [], [ra]
        a = post[0]
        for l, wl in enumerate(mats[:-1]):
            rz = a @ vmats[l] + ra @ wl
            rpre.append(rz)
            ra = dact(pre[l]) * rz
            rpost.append(ra)
            a = post[l + 1]
        rlogits = post[-1] @ vmats[-1] + ra @ mats[-1]

        # curvature of the loss applied to R(logits)
        n = self.data.n
        if self.data.binary:
            y = self.data.labels[:, None]
            s = sigmoid(y * logits) * sigmoid(-y * logits)
            rdelta = s * rlogits / n
            _, delta = self._loss_terms(logits)
        else:
            _, delta = self._loss_terms(logits)
            probs = delta * n
            probs[np.arange(n), self.data.labels] += 1.0
            rdelta = (probs * rlogits - probs * np.sum(probs * rlogits, axis=1, keepdims=True)) / n

        # reverse pass carrying both delta and R(delta)
        hv = [None] * len(mats)
        hv[-1] = rpost[-1].T @ delta + post[-1].T @ rdelta
        for l in range(len(mats) - 2, -1, -1):
            s_l = delta @ mats[l + 1].T
            rs_l = rdelta @ mats[l + 1].T + delta @ vmats[l + 1].T
            d = dact(pre[l])
            rdelta = rs_l * d + s_l * ddact(pre[l]) * rpre[l]
            delta = s_l * d
            hv[l] = rpost[l].T @ delta + post[l].T @ rdelta
        return self.pack(hv) + self.lam * v


def build_objective(spec: dict) -> Objective:
    """Construct an objective from a descriptor, e.g. ``{"kind": "booth"}``.

    Recognized kinds: quadratic(h, c), booth, goldstein_price, h2_chain(d,
    active), distance_counterexample(eps, alpha), logreg(data, lambda_wd),
    mlp(layers, activation, data, lambda_wd).
    """
    spec = dict(spec)
    kind = spec.pop("kind", None)
    lam = float(spec.pop("lambda_wd", 0.0))
    if kind == "quadratic":
        return Quadratic(spec["h"], spec.get("c"))
    if kind == "booth":
        return Booth()
    if kind == "goldstein_price":
        return GoldsteinPrice()
    if kind == "h2_chain":
        return H2Chain(spec["d"], spec.get("active"))
    if kind == "distance_counterexample":
        return DistanceCounterexample(spec["eps"], spec["alpha"])
    if kind == "logreg":
        return LogisticRegression(spec["data"], lam)
    if kind == "mlp":
        return MLP(spec["layers"], spec.get("activation", "softplus"), spec["data"], lam)
    raise ValueError(f"unknown objective kind {kind!r}")


# -- finite-difference oracles ----------------------------------------------


def fd_gradient(obj: Objective, w, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient, one coordinate at a time."""
    if h <= 0:
        raise ValueError("step must be positive")
    w = np.asarray(w, dtype=float)
    out = np.empty_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        out[i] = (obj.value(w + e) - obj.value(w - e)) / (2 * h)
    return out


def fd_hvp(obj: Objective, w, v, h: float = 1e-5) -> np.ndarray:
    """Central difference of gradients along v: (g(w+hv) - g(w-hv)) / 2h."""
    if h <= 0:
        raise ValueError("step must be positive")
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    return (obj.grad(w + h * v) - obj.grad(w - h * v)) / (2 * h)
