"""Adam with bias correction.

Parameters are leaf Tensors; `step` rebinds their `.data` in place between
graph constructions. With bias correction the very first update has magnitude
close to `lr` in every coordinate with a nonzero gradient, which makes the
step size directly interpretable.
"""

import numpy as np

from .autodiff import gradients


class Adam:
    def __init__(self, params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0:
            raise ValueError("lr must be nonnegative")
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ValueError("got %d gradients for %d parameters" % (len(grads), len(self.params)))
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self._m, self._v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - self.lr * update

    def step_loss(self, loss):
        """Backward pass on `loss` followed by one update; returns the loss."""
        self.step(gradients(loss, self.params))
        return float(loss.data)
