"""Dense networks with hand-derived gradients and an Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_ACT = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "linear": (lambda z: z, lambda z, a: np.ones_like(z)),
    "softplus": (lambda z: np.logaddexp(0.0, z), lambda z, a: 1.0 / (1.0 + np.exp(-z))),
}


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple  # (in, hidden..., out)
    activations: tuple  # one per layer

    def __post_init__(self):
        if len(self.widths) < 2 or len(self.activations) != len(self.widths) - 1:
            raise ValueError("need one activation per layer")
        for a in self.activations:
            if a not in _ACT:
                raise ValueError(f"unknown activation {a!r}")

    @classmethod
    def make(cls, n_in, n_out, hidden=(256, 256), hidden_act="relu", out_act="linear"):
        widths = (n_in, *hidden, n_out)
        return cls(widths, (hidden_act,) * len(hidden) + (out_act,))


class Mlp:
    """params is a flat list [W0, b0, W1, b1, ...]; W has shape (in, out)."""

    def __init__(self, spec: MlpSpec, rng: np.random.Generator | None = None, params=None):
        self.spec = spec
        if params is None:
            rng = rng or np.random.default_rng(0)
            params = []
            for k, (a, b) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
                lim = 1.0 / np.sqrt(a)
                params += [rng.uniform(-lim, lim, (a, b)), rng.uniform(-lim, lim, b)]
        self.params = [np.array(p, dtype=float) for p in params]

    def copy(self) -> "Mlp":
        return Mlp(self.spec, params=[p.copy() for p in self.params])

    def forward(self, x, cache: bool = False):
        a = np.asarray(x, dtype=float)
        tape = []
        for k, act in enumerate(self.spec.activations):
            W, b = self.params[2 * k], self.params[2 * k + 1]
            z = a @ W + b
            out = _ACT[act][0](z)
            if cache:
                tape.append((a, z, out))
            a = out
        return (a, tape) if cache else a

    __call__ = forward

    def backward(self, tape, grad_out):
        """Gradients of sum(grad_out * output) w.r.t. params and the input."""
        grads = [None] * len(self.params)
        g = grad_out
        for k in range(len(tape) - 1, -1, -1):
            a, z, out = tape[k]
            g = g * _ACT[self.spec.activations[k]][1](z, out)
            grads[2 * k] = a.T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.params[2 * k].T
        return grads, g

    def soft_update_from(self, online: "Mlp", tau: float):
        """target <- tau * online + (1 - tau) * target."""
        if not 0.0 <= tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        for p, q in zip(self.params, online.params):
            if tau == 1.0:
                p[...] = q
            elif tau > 0.0:
                p *= 1.0 - tau
                p += tau * q


class Adam:
    def __init__(self, params, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        return {"t": self.t, "m": self.m, "v": self.v}

    def load(self, t, m, v):
        self.t = int(t)
        for a, b in zip(self.m, m):
            a[...] = b
        for a, b in zip(self.v, v):
            a[...] = b


def check_gradients(net: Mlp, x, rng, eps: float = 1e-6):
    """Max relative error between backprop and central differences of a random projection."""
    x = np.asarray(x, dtype=float)
    y, tape = net.forward(x, cache=True)
    c = rng.standard_normal(y.shape)
    grads, gx = net.backward(tape, c)

    def f():
        return float(np.sum(c * net.forward(x)))

    worst = 0.0
    for p, g in zip(net.params, grads):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            fp = f()
            flat[i] = old - eps
            fm = f()
            flat[i] = old
            num = (fp - fm) / (2 * eps)
            worst = max(worst, abs(num - gflat[i]) / max(1e-6, abs(num) + abs(gflat[i])))
    return worst
