"""Convolutional path-loss regressor over WEK descriptor sequences."""
import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..exceptions import InvalidInputError
from ..wek import cnn_channels
from .nn import conv1d_backward, conv1d_forward, he_normal, relu, sgd_step

N_INPUT_CHANNELS = 3


class PathLossRegressor(RegressorMixin, BaseEstimator):
    """Two same-padded conv layers and a position-wise dense head.

    Input ``X`` has shape (n_samples, 3, window): blockage, reflection
    strength (dB) and diffraction strength (dB) along a trajectory window.
    Targets ``y`` have shape (n_samples, window), path loss in dB.  Inputs and
    targets are standardised internally; weights stay float64 throughout.

    Parameters
    ----------
    window : int
        Sequence length the model is trained for.
    channels : tuple of int
        Output channels of the two conv layers.
    kernel_size : int
        Odd kernel width of both conv layers.
    epochs, learning_rate, batch_size : training schedule for plain
        mini-batch gradient descent.
    random_state : int
        Seed for weight initialisation and batch shuffling.
    """

    def __init__(self, window=32, channels=(8, 16), kernel_size=3, epochs=300,
                 learning_rate=0.05, batch_size=32, random_state=0):
        self.window = window
        self.channels = channels
        self.kernel_size = kernel_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.random_state = random_state

    # -- model -----------------------------------------------------------------

    def _init_params(self, rng):
        c1, c2 = self.channels
        k = self.kernel_size
        return {
            "w1": he_normal(rng, (c1, N_INPUT_CHANNELS, k), N_INPUT_CHANNELS * k),
            "b1": np.zeros(c1),
            "w2": he_normal(rng, (c2, c1, k), c1 * k),
            "b2": np.zeros(c2),
            "w3": he_normal(rng, (1, c2), c2, scale=0.5),
            "b3": np.zeros(1),
        }

    @staticmethod
    def _forward(params, x):
        z1, c1 = conv1d_forward(x, params["w1"], params["b1"], mode="edge")
        a1 = relu(z1)
        z2, c2 = conv1d_forward(a1, params["w2"], params["b2"], mode="edge")
        a2 = relu(z2)
        out = np.einsum("oc,ncl->nl", params["w3"], a2) + params["b3"][0]
        return out, (z1, c1, z2, c2, a2)

    @classmethod
    def _loss_grad(cls, params, x, y):
        """Mean squared error over all positions and its parameter gradients."""
        out, (z1, c1, z2, c2, a2) = cls._forward(params, x)
        err = out - y
        loss = float(np.mean(err ** 2))
        dout = 2.0 * err / err.size
        grads = {
            "w3": np.einsum("nl,ncl->c", dout, a2)[None, :],
            "b3": np.array([dout.sum()]),
        }
        da2 = params["w3"][0][None, :, None] * dout[:, None, :]
        dz2 = da2 * (z2 > 0)
        da1, grads["w2"], grads["b2"] = conv1d_backward(dz2, c2)
        dz1 = da1 * (z1 > 0)
        _, grads["w1"], grads["b1"] = conv1d_backward(dz1, c1)
        return loss, grads

    # -- estimator API -----------------------------------------------------------

    def _check_X(self, X, fitting=False):
        X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64)
        if X.ndim != 3 or X.shape[1] != N_INPUT_CHANNELS or X.shape[2] != self.window:
            raise InvalidInputError(
                f"expected input of shape (n, {N_INPUT_CHANNELS}, {self.window}), got {X.shape}"
            )
        if not fitting and len(X) == 0:
            raise InvalidInputError("empty input")
        return X

    def fit(self, X, y):
        X = self._check_X(X, fitting=True)
        y = np.asarray(y, dtype=np.float64)
        if len(X) == 0:
            raise InvalidInputError("empty training set")
        if y.shape != (X.shape[0], self.window) or not np.all(np.isfinite(y)):
            raise InvalidInputError("targets must be finite with shape (n, window)")
        rng = np.random.default_rng(self.random_state)
        self.x_mean_ = X.mean(axis=(0, 2))
        std = X.std(axis=(0, 2))
        self.x_scale_ = np.where(std > 0, std, 1.0)
        self.y_mean_ = float(y.mean())
        self.y_scale_ = float(y.std()) or 1.0
        xs = (X - self.x_mean_[None, :, None]) / self.x_scale_[None, :, None]
        ys = (y - self.y_mean_) / self.y_scale_

        self.params_ = self._init_params(rng)
        self.loss_curve_ = []
        n = len(xs)
        for _ in range(self.epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, self.batch_size):
                batch = order[start:start + self.batch_size]
                loss, grads = self._loss_grad(self.params_, xs[batch], ys[batch])
                sgd_step(self.params_, grads, self.learning_rate)
                total += loss * len(batch)
            self.loss_curve_.append(total / n * self.y_scale_ ** 2)
        self.train_loss_ = float(np.mean((self.predict(X) - y) ** 2))
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = self._check_X(X)
        xs = (X - self.x_mean_[None, :, None]) / self.x_scale_[None, :, None]
        out, _ = self._forward(self.params_, xs)
        return out * self.y_scale_ + self.y_mean_

    def predict_sequence(self, descriptors):
        """Path loss along an arbitrary-length descriptor sequence of shape (n, 7).

        Windows of ``self.window`` positions tile the sequence (the last one is
        aligned to its end) and overlapping predictions are averaged.
        """
        channels = cnn_channels(descriptors)  # (3, n)
        n = channels.shape[1]
        if n < self.window:
            raise InvalidInputError(f"sequence shorter than the model window ({self.window})")
        starts = list(range(0, n - self.window + 1, self.window))
        if starts[-1] != n - self.window:
            starts.append(n - self.window)
        batch = np.stack([channels[:, s:s + self.window] for s in starts])
        pred = self.predict(batch)
        acc = np.zeros(n)
        cnt = np.zeros(n)
        for s, p in zip(starts, pred):
            acc[s:s + self.window] += p
            cnt[s:s + self.window] += 1
        return acc / cnt


def sequence_windows(descriptors, pl, window, stride):
    """Cut aligned (X, y) training windows from one trajectory, skipping outage cells."""
    channels = cnn_channels(descriptors)
    pl = np.asarray(pl, dtype=float)
    xs, ys = [], []
    for s in range(0, len(pl) - window + 1, stride):
        seg = pl[s:s + window]
        if np.all(np.isfinite(seg)):
            xs.append(channels[:, s:s + window])
            ys.append(seg)
    return xs, ys


def train_pl_predictor(dataset, epochs=300, learning_rate=0.05, seed=0, **kwargs):
    """Fit a :class:`PathLossRegressor` on ``[(descriptor_sequence, pl_sequence), ...]``.

    Each descriptor sequence has shape (window, 7) in WEK field order.
    """
    if len(dataset) == 0:
        raise InvalidInputError("empty training dataset")
    lengths = {len(pl) for _, pl in dataset}
    if len(lengths) != 1:
        raise InvalidInputError("all training sequences must share one length")
    window = lengths.pop()
    X = np.stack([cnn_channels(d) for d, _ in dataset])
    y = np.stack([np.asarray(pl, dtype=float) for _, pl in dataset])
    model = PathLossRegressor(window=window, epochs=epochs, learning_rate=learning_rate,
                              random_state=seed, **kwargs)
    return model.fit(X, y)


def predict_pl(model, descriptors):
    """Predicted path loss (dB) for one descriptor sequence of the trained length."""
    channels = cnn_channels(descriptors)
    if channels.shape[1] != model.window:
        raise InvalidInputError(f"sequence length {channels.shape[1]} != trained window {model.window}")
    return model.predict(channels[None])[0]
