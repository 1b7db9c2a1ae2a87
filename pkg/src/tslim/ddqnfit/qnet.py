"""Small fully connected Q-network with hand-written backpropagation.

Hidden layers use tanh; the output layer is linear, one unit per action.
Parameters are stored as a flat list ``[W1, b1, W2, b2, ...]`` so that the
online network can be copied into the target network in one go.
"""
from __future__ import annotations

import numpy as np


class QNetwork:
    def __init__(self, n_in: int, n_out: int, hidden=(64, 64), rng: np.random.Generator | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        sizes = [n_in, *hidden, n_out]
        self.params: list[np.ndarray] = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            # Glorot-uniform weights, zero biases
            lim = np.sqrt(6.0 / (a + b))
            self.params.append(rng.uniform(-lim, lim, size=(a, b)))
            self.params.append(np.zeros(b))
        self.sizes = tuple(sizes)

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def forward(self, x, keep: bool = False):
        """Q-values for a batch of states ``x`` (shape ``(batch, n_in)``)."""
        a = np.atleast_2d(np.asarray(x, dtype=float))
        acts = [a]
        for layer in range(self.n_layers):
            w, b = self.params[2 * layer], self.params[2 * layer + 1]
            z = a @ w + b
            a = np.tanh(z) if layer < self.n_layers - 1 else z
            acts.append(a)
        return (a, acts) if keep else a

    def backward(self, acts, grad_out):
        """Gradients of a scalar loss w.r.t. every parameter, given dL/dQ."""
        grads = [None] * len(self.params)
        delta = grad_out
        for layer in reversed(range(self.n_layers)):
            a_prev = acts[layer]
            grads[2 * layer] = a_prev.T @ delta
            grads[2 * layer + 1] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.params[2 * layer].T) * (1.0 - acts[layer] ** 2)
        return grads

    def td_loss_and_grads(self, states, actions, targets):
        """Half mean squared TD error on the taken actions, and its gradients."""
        q, acts = self.forward(states, keep=True)
        rows = np.arange(len(actions))
        err = q[rows, actions] - targets
        loss = 0.5 * float(np.mean(err**2))
        grad_out = np.zeros_like(q)
        grad_out[rows, actions] = err / len(actions)
        return loss, self.backward(acts, grad_out)

    def sgd_step(self, grads, lr: float, clip: float | None = 10.0):
        if clip is not None:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if norm > clip:
                grads = [g * (clip / norm) for g in grads]
        for p, g in zip(self.params, grads):
            p -= lr * g

    def copy_from(self, other: "QNetwork"):
        if other.sizes != self.sizes:
            raise ValueError("network architectures differ")
        self.params = [p.copy() for p in other.params]

    def clone(self) -> "QNetwork":
        net = QNetwork.__new__(QNetwork)
        net.sizes = self.sizes
        net.params = [p.copy() for p in self.params]
        return net

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat):
        pos = 0
        for p in self.params:
            p[...] = np.reshape(flat[pos : pos + p.size], p.shape)
            pos += p.size
