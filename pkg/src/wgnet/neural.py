"""Small tanh networks with hand-written reverse mode, boundary cutoffs and Adam.

Gradients are only needed for scalars that depend on the network through its
values at a fixed point set, so backpropagation takes the upstream derivative
with respect to those values and returns the derivative with respect to the
flat parameter vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(FloatingPointError):
    pass


class Mlp:
    """Feedforward network R^2 -> R with tanh hidden layers and a linear output.

    Parameters live in one flat vector ``theta``; each layer stores its
    weight matrix (fan_in x fan_out, row major) followed by its bias.
    """

    def __init__(self, widths, theta=None, seed=None):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or widths[0] != 2 or widths[-1] != 1:
            raise ValueError("widths must start with 2 inputs and end with 1 output")
        if any(w < 1 for w in widths):
            raise ValueError("layer widths must be positive")
        self.widths = widths
        self.seed = seed
        self._slices = []
        off = 0
        for fi, fo in zip(widths[:-1], widths[1:]):
            self._slices.append((slice(off, off + fi * fo), slice(off + fi * fo, off + fi * fo + fo), fi, fo))
            off += fi * fo + fo
        self.n_params = off
        self.theta = np.zeros(off) if theta is None else np.array(theta, dtype=float)
        if self.theta.shape != (off,):
            raise ValueError(f"expected {off} parameters, got {self.theta.shape}")

    def layers(self, theta=None):
        theta = self.theta if theta is None else theta
        return [(theta[w].reshape(fi, fo), theta[b]) for w, b, fi, fo in self._slices]

    def copy(self) -> "Mlp":
        return Mlp(self.widths, self.theta.copy(), self.seed)

    def forward(self, points, theta=None, keep=False):
        a = np.atleast_2d(np.asarray(points, dtype=float))
        acts = [a]
        layers = self.layers(theta)
        for i, (W, b) in enumerate(layers):
            z = a @ W + b
            a = np.tanh(z) if i < len(layers) - 1 else z
            acts.append(a)
        out = a[:, 0]
        return (out, acts) if keep else out

    __call__ = forward

    def backward(self, acts, upstream, theta=None) -> np.ndarray:
        """d(sum upstream * values)/d theta from the activations of ``forward``."""
        upstream = np.asarray(upstream, dtype=float)
        if not np.all(np.isfinite(upstream)):
            raise NonFiniteError("non-finite upstream gradient")
        grad = np.zeros(self.n_params)
        layers = self.layers(theta)
        delta = upstream[:, None]
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            ws, bs, _, _ = self._slices[i]
            grad[ws] = (acts[i].T @ delta).ravel()
            grad[bs] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ W.T) * (1.0 - acts[i] ** 2)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError("non-finite parameter gradient")
        return grad

    def input_derivatives(self, points, theta=None):
        """Value, spatial gradient (N, 2) and Laplacian (N,) by forward-mode propagation."""
        a = np.atleast_2d(np.asarray(points, dtype=float))
        da = np.broadcast_to(np.eye(2)[None, :, :], (len(a), 2, 2)).copy()  # (N, width, dir)
        d2a = np.zeros_like(da)
        layers = self.layers(theta)
        for i, (W, b) in enumerate(layers):
            z = a @ W + b
            dz = np.einsum("nwd,wo->nod", da, W)
            d2z = np.einsum("nwd,wo->nod", d2a, W)
            if i < len(layers) - 1:
                a = np.tanh(z)
                s = (1.0 - a * a)[:, :, None]
                da = s * dz
                d2a = s * d2z - 2.0 * a[:, :, None] * s * dz * dz
            else:
                a, da, d2a = z, dz, d2z
        return a[:, 0], da[:, 0, :], d2a[:, 0, :].sum(axis=1)

    def to_dict(self) -> dict:
        return {"widths": self.widths, "seed": self.seed, "theta": [float(t) for t in self.theta]}

    @classmethod
    def from_dict(cls, d) -> "Mlp":
        return cls(d["widths"], d["theta"], d.get("seed"))


def mlp_init(widths, seed) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    net = Mlp(widths, seed=seed)
    rng = np.random.default_rng(seed)
    for w, _, fi, fo in net._slices:
        bound = np.sqrt(6.0 / (fi + fo))
        net.theta[w] = rng.uniform(-bound, bound, fi * fo)
    return net


def backprop_through_points(mlp: Mlp, points, upstream, theta=None) -> np.ndarray:
    _, acts = mlp.forward(points, theta, keep=True)
    return mlp.backward(acts, upstream, theta)


# -------------------------------------------------------------------- cutoffs

def r_and(f, g):
    return f + g - np.sqrt(f * f + g * g)


def r_or(f, g):
    return f + g + np.sqrt(f * f + g * g)


@dataclass
class CutoffFunction:
    domain: str
    fn: object = field(repr=False)

    def __call__(self, points) -> np.ndarray:
        return self.fn(np.atleast_2d(np.asarray(points, dtype=float)))


def _square_cutoff(p):
    x, y = p[:, 0], p[:, 1]
    return x * (1 - x) * y * (1 - y)


def square_cutoff_derivatives(points):
    """Gradient and Laplacian of x(1-x)y(1-y)."""
    p = np.atleast_2d(points)
    x, y = p[:, 0], p[:, 1]
    gx, gy = x * (1 - x), y * (1 - y)
    grad = np.column_stack([(1 - 2 * x) * gy, gx * (1 - 2 * y)])
    return grad, -2 * gy - 2 * gx


def _lshape_cutoff(p):
    x, y = p[:, 0], p[:, 1]
    box = r_and(1 - x * x, 1 - y * y)
    notch = r_or(-x, y)
    return r_and(box, notch)


def cutoff(domain: str, expression: str | None = None) -> CutoffFunction:
    if domain == "square":
        return CutoffFunction("square", _square_cutoff)
    if domain == "lshape":
        return CutoffFunction("lshape", _lshape_cutoff)
    if domain == "custom":
        if not expression:
            raise ValueError("custom cutoff needs an expression")
        from .problems import compile_expression

        return CutoffFunction("custom", compile_expression(expression))
    raise ValueError(f"unknown domain tag {domain!r}")


def boundary_samples(domain: str, n=200, seed=0) -> np.ndarray:
    """Points spread over the boundary of a built-in domain."""
    rng = np.random.default_rng(seed)
    if domain == "square":
        segs = [((0, 0), (1, 0)), ((1, 0), (1, 1)), ((1, 1), (0, 1)), ((0, 1), (0, 0))]
    elif domain == "lshape":
        segs = [((-1, -1), (0, -1)), ((0, -1), (0, 0)), ((0, 0), (1, 0)), ((1, 0), (1, 1)),
                ((1, 1), (-1, 1)), ((-1, 1), (-1, -1))]
    else:
        raise ValueError(f"no boundary sampler for domain {domain!r}")
    segs = np.array(segs, dtype=float)
    lengths = np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)
    which = rng.choice(len(segs), n, p=lengths / lengths.sum())
    t = rng.uniform(0, 1, n)[:, None]
    return segs[which, 0] + t * (segs[which, 1] - segs[which, 0])


# ----------------------------------------------------------------- candidates

@dataclass
class NeuralCandidate:
    """n(x) = phi(x) * net(x)."""

    mlp: Mlp
    phi: CutoffFunction

    def __call__(self, points, theta=None) -> np.ndarray:
        return self.phi(points) * self.mlp.forward(points, theta)

    def backprop(self, points, upstream, theta=None) -> np.ndarray:
        return backprop_through_points(self.mlp, points, np.asarray(upstream) * self.phi(points), theta)


def candidate_eval(candidate: NeuralCandidate, points) -> np.ndarray:
    return candidate(points)


class PointEvaluator:
    """Candidate evaluation at a fixed point set, reusing the cutoff values."""

    def __init__(self, candidate: NeuralCandidate, points):
        self.candidate = candidate
        self.points = np.atleast_2d(points)
        self.phi = candidate.phi(self.points)
        self._acts = None

    def values(self, theta) -> np.ndarray:
        out, self._acts = self.candidate.mlp.forward(self.points, theta, keep=True)
        return self.phi * out

    def gradient(self, theta, upstream) -> np.ndarray:
        """Parameter gradient for the most recent ``values(theta)`` call."""
        return self.candidate.mlp.backward(self._acts, np.asarray(upstream) * self.phi, theta)


# ---------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    theta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def start(cls, theta) -> "AdamState":
        theta = np.array(theta, dtype=float)
        return cls(theta, np.zeros_like(theta), np.zeros_like(theta))


def adam_step(state: AdamState, grad, lr: float) -> AdamState:
    """One Adam update for minimization: moves theta against ``grad``."""
    grad = np.asarray(grad, dtype=float)
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    mhat = m / (1 - state.beta1**t)
    vhat = v / (1 - state.beta2**t)
    theta = state.theta - lr * mhat / (np.sqrt(vhat) + state.eps)
    return AdamState(theta, m, v, t, state.beta1, state.beta2, state.eps)
