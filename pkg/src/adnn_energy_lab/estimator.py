"""Black-box energy regressor: learns joules from (input, measured mean)
pairs without ever touching the target model's internals.

A residual MLP (stem 64->64, four width-64 residual blocks, linear head)
regresses normalized energies; predictions de-normalize back to joules.
The head is linear on purpose so the ascent signal used by test-input
generation stays unbounded.
"""

import math

import numpy as np

from .autodiff import Tensor, relu, tmean, tsum
from .base import ParamsMixin, check_is_fitted
from .nn import Dense, ResidualBlock
from .optim import Adam
from .seeding import derive_rng
from .serialize import array_from_json, array_to_json
from .validation import as_sample_matrix, check_same_length


def estimator_loss(predictions, targets):
    """Mean squared error between predicted and measured joules."""
    predictions = np.asarray(predictions, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    check_same_length(predictions, targets, "predictions", "targets")
    if len(predictions) == 0:
        raise ValueError("need at least one prediction/target pair")
    return float(np.mean((predictions - targets) ** 2))


class EnergyEstimator(ParamsMixin):
    """Regression network imitating a target's energy consumption."""

    def __init__(self, input_dim=64, width=64, num_blocks=4, epochs=2000,
                 lr=0.005, batch_size=32, val_fraction=0.1, seed=0,
                 target_id=None):
        self.input_dim = input_dim
        self.width = width
        self.num_blocks = num_blocks
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.seed = seed
        self.target_id = target_id

    # -- construction ----------------------------------------------------

    def _build(self, rng):
        self.stem_ = Dense.init(rng, self.input_dim, self.width)
        self.blocks_ = [ResidualBlock.init(rng, self.width)
                        for _ in range(self.num_blocks)]
        self.head_ = Dense.init(rng, self.width, 1)

    def _parameters(self):
        params = list(self.stem_.params)
        for block in self.blocks_:
            params.extend(block.params)
        params.extend(self.head_.params)
        return params

    def _forward_normalized(self, x):
        h = relu(self.stem_(x))
        for block in self.blocks_:
            h = block(h)
        return self.head_(h)

    # -- training ----------------------------------------------------------

    def fit(self, X, y):
        """Regress measured joules on inputs; holds out a seeded 10% split."""
        X = as_sample_matrix(X, "X", feature_dim=self.input_dim)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        check_same_length(X, y, "X", "y")
        if len(X) < 20:
            raise ValueError("need at least 20 measured pairs, got %d" % len(X))

        self.energy_mean_ = float(y.mean())
        scale = float(y.std())
        self.energy_scale_ = scale if scale > 0 else 1.0
        targets = (y - self.energy_mean_) / self.energy_scale_

        rng = derive_rng(self.seed, "estimator")
        order = rng.permutation(len(X))
        n_val = max(1, int(round(self.val_fraction * len(X))))
        val_idx, train_idx = order[:n_val], order[n_val:]

        self._build(rng)
        params = self._parameters()
        opt = Adam(params, lr=self.lr)
        self.history_ = []
        self.val_history_ = []
        best = (np.inf, [p.data.copy() for p in params], 0)
        # burn-in: barely-trained nets can win the (small) validation split
        # by luck while still being useless off-manifold
        warmup = self.epochs // 10
        for epoch in range(self.epochs):
            # cosine-annealed step size; the late tiny steps let the fit
            # settle instead of bouncing on minibatch noise
            opt.lr = self.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / max(1, self.epochs)))
            perm = rng.permutation(len(train_idx))
            epoch_loss = 0.0
            for start in range(0, len(perm), self.batch_size):
                batch = train_idx[perm[start:start + self.batch_size]]
                pred = self._forward_normalized(Tensor(X[batch]))
                err = pred - Tensor(targets[batch].reshape(-1, 1))
                loss = tmean(tsum(err * err, axis=1))
                epoch_loss += opt.step_loss(loss) * len(batch)
            self.history_.append(epoch_loss / len(train_idx))
            val_norm = self._forward_normalized(Tensor(X[val_idx])).data.reshape(-1)
            val_mse = float(np.mean((val_norm - targets[val_idx]) ** 2))
            self.val_history_.append(val_mse)
            if epoch >= warmup and val_mse < best[0]:
                best = (val_mse, [p.data.copy() for p in params], epoch)

        # keep the checkpoint that generalized best, not the last one;
        # late epochs can trade held-out accuracy for training-set fit
        for p, saved in zip(params, best[1]):
            p.data = saved
        self.best_epoch_ = best[2]

        val_pred = self.predict(X[val_idx])
        self.val_rmse_ = float(np.sqrt(estimator_loss(val_pred, y[val_idx])))
        span = float(y.max() - y.min())
        # degenerate (all-equal) targets have no range to be a fraction of
        self.val_relative_rmse_ = self.val_rmse_ / span if span > 0 else 0.0
        return self

    # -- inference ---------------------------------------------------------

    def predict_tensor(self, x):
        """Joule prediction as a Tensor; differentiable w.r.t. x."""
        check_is_fitted(self, "head_")
        out = self._forward_normalized(x)
        return out * Tensor(self.energy_scale_) + Tensor(self.energy_mean_)

    def predict(self, X):
        check_is_fitted(self, "head_")
        X = as_sample_matrix(X, "X", feature_dim=self.input_dim)
        return self.predict_tensor(Tensor(X)).data.reshape(-1)

    # -- serialization -------------------------------------------------------

    def to_payload(self):
        check_is_fitted(self, "head_")
        params = {"stem.weight": self.stem_.weight, "stem.bias": self.stem_.bias,
                  "head.weight": self.head_.weight, "head.bias": self.head_.bias}
        for i, block in enumerate(self.blocks_):
            params["block%d.lin1.weight" % i] = block.lin1.weight
            params["block%d.lin1.bias" % i] = block.lin1.bias
            params["block%d.lin2.weight" % i] = block.lin2.weight
            params["block%d.lin2.bias" % i] = block.lin2.bias
        return {
            "kind": "estimator",
            "config": {
                "input_dim": self.input_dim, "width": self.width,
                "num_blocks": self.num_blocks, "target_id": self.target_id,
                "energy_mean": self.energy_mean_,
                "energy_scale": self.energy_scale_,
            },
            "params": {k: array_to_json(t.data) for k, t in params.items()},
        }

    @classmethod
    def from_payload(cls, payload):
        config = payload["config"]
        est = cls(input_dim=config["input_dim"], width=config["width"],
                  num_blocks=config["num_blocks"],
                  target_id=config.get("target_id"))
        params = {k: array_from_json(v) for k, v in payload["params"].items()}
        est.stem_ = Dense(params["stem.weight"], params["stem.bias"])
        est.blocks_ = [
            ResidualBlock(
                Dense(params["block%d.lin1.weight" % i],
                      params["block%d.lin1.bias" % i]),
                Dense(params["block%d.lin2.weight" % i],
                      params["block%d.lin2.bias" % i]),
            )
            for i in range(config["num_blocks"])
        ]
        est.head_ = Dense(params["head.weight"], params["head.bias"])
        est.energy_mean_ = float(config["energy_mean"])
        est.energy_scale_ = float(config["energy_scale"])
        return est


def train_estimator(inputs, measured, epochs=2000, lr=0.005, seed=0, **kwargs):
    """Fit an EnergyEstimator; returns (estimator, validation RMSE in joules)."""
    est = EnergyEstimator(epochs=epochs, lr=lr, seed=seed, **kwargs)
    est.fit(inputs, measured)
    return est, est.val_rmse_


def predict_energy(estimator, x):
    """Predicted joules for one input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("predict_energy expects a single input vector")
    return float(estimator.predict(x)[0])
