"""Pilot-plus-WEK CSI reconstruction network.

The decoder works on the pilot comb: it refines the (noisy) pilot values
using local convolutional context and an embedding of the link's WEK
descriptor, then a fixed linear interpolation operator lifts the refined
comb to every subcarrier.  A linear skip convolution on the raw pilots,
initialised to the identity, makes an untrained network reproduce plain
linear interpolation; with every weight at zero the output is identically
zero.

Each sample is scaled by the RMS of its own pilots before entering the
network, and the training loss is the per-subcarrier mean squared complex
error in that scaled domain.
"""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..exceptions import InvalidInputError
from ..wek import N_DESCRIPTORS, STRENGTH_FLOOR
from .channel import interpolation_matrix
from .nn import conv1d_backward, conv1d_forward, he_normal, relu, sgd_step

_ENC_KERNEL = 3


def _identity_kernel(channels, k):
    w = np.zeros((channels, channels, k))
    w[np.arange(channels), np.arange(channels), k // 2] = 1.0
    return w


def wek_features(descriptors):
    """Descriptor rows (n, 7) with path strengths moved to the dB domain."""
    d = np.array(descriptors, dtype=float, copy=True).reshape(-1, N_DESCRIPTORS)
    d[:, 4] = 10.0 * np.log10(d[:, 4] + STRENGTH_FLOOR)
    d[:, 6] = 10.0 * np.log10(d[:, 6] + STRENGTH_FLOOR)
    return d


class CSIReconstructor(BaseEstimator):
    """Encoder-decoder CSI estimator ``H_hat = F(H_partial, K)``.

    Parameters
    ----------
    pilot_indices : array-like of int
        Subcarrier indices of the pilot comb.
    n_subcarriers : int
        Number of subcarriers of the reconstructed channel.
    hidden : int
        Hidden channels of the decoder.
    kernel_size : int
        Odd kernel width of the decoder convolutions (in pilot units).
    wek_channels : int
        Channels of the two encoder conv layers.
    use_wek : bool
        ``False`` zeroes the WEK input (the no-WEK ablation).
    init : {"random", "zeros"}
        ``"zeros"`` leaves every weight at zero (the network outputs 0).
    """

    def __init__(self, pilot_indices=None, n_subcarriers=None, hidden=16, kernel_size=5,
                 wek_channels=4, use_wek=True, epochs=20, learning_rate=0.1, batch_size=32,
                 init="random", random_state=0):
        self.pilot_indices = pilot_indices
        self.n_subcarriers = n_subcarriers
        self.hidden = hidden
        self.kernel_size = kernel_size
        self.wek_channels = wek_channels
        self.use_wek = use_wek
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.init = init
        self.random_state = random_state

    # -- model -----------------------------------------------------------------

    def _init_params(self, rng, n_t):
        c_in = 2 * n_t
        ce, h, k = self.wek_channels, self.hidden, self.kernel_size
        shapes = {
            "e1w": (ce, 1, _ENC_KERNEL), "e1b": (ce,),
            "e2w": (ce, ce, _ENC_KERNEL), "e2b": (ce,),
            "v": (h, ce * N_DESCRIPTORS),
            "d1w": (h, c_in, k), "d1b": (h,),
            "d2w": (c_in, h, k), "d2b": (c_in,),
            "skip": (c_in, c_in, k),
        }
        if self.init == "zeros":
            return {name: np.zeros(s) for name, s in shapes.items()}
        if self.init != "random":
            raise InvalidInputError(f"unknown init {self.init!r}")
        return {
            "e1w": he_normal(rng, shapes["e1w"], _ENC_KERNEL),
            "e1b": np.zeros(ce),
            "e2w": he_normal(rng, shapes["e2w"], ce * _ENC_KERNEL),
            "e2b": np.zeros(ce),
            "v": he_normal(rng, shapes["v"], ce * N_DESCRIPTORS, scale=0.5),
            "d1w": he_normal(rng, shapes["d1w"], c_in * k),
            "d1b": np.zeros(h),
            "d2w": he_normal(rng, shapes["d2w"], h * k, scale=0.05),
            "d2b": np.zeros(c_in),
            "skip": _identity_kernel(c_in, k),
        }

    @staticmethod
    def _forward(params, x, w, interp):
        n = len(x)
        ze1, ce1 = conv1d_forward(w, params["e1w"], params["e1b"])
        ae1 = relu(ze1)
        ze2, ce2 = conv1d_forward(ae1, params["e2w"], params["e2b"])
        emb = relu(ze2).reshape(n, -1)
        zd1, cd1 = conv1d_forward(x, params["d1w"], params["d1b"])
        zd1 = zd1 + (emb @ params["v"].T)[:, :, None]
        ad1 = relu(zd1)
        zd2, cd2 = conv1d_forward(ad1, params["d2w"], params["d2b"])
        zs, cs = conv1d_forward(x, params["skip"], np.zeros(x.shape[1]), mode="edge")
        r = zd2 + zs
        n_t = x.shape[1] // 2
        full = (r.reshape(-1, r.shape[2]) @ interp.T).reshape(n, 2 * n_t, -1)
        h_hat = full[:, :n_t] + 1j * full[:, n_t:]
        return h_hat, (ze1, ce1, ze2, ce2, emb, zd1, cd1, cd2, cs)

    @classmethod
    def _loss_grad(cls, params, x, w, interp, target):
        """Mean squared complex error per subcarrier and its gradients."""
        h_hat, (ze1, ce1, ze2, ce2, emb, zd1, cd1, cd2, cs) = cls._forward(params, x, w, interp)
        err = h_hat - target
        n, _, n_sc = target.shape
        loss = float(np.sum(np.abs(err) ** 2) / (n * n_sc))
        dh = 2.0 * err / (n * n_sc)
        dcomb = dh @ interp
        dr = np.concatenate([dcomb.real, dcomb.imag], axis=1)
        grads = {}
        _, grads["skip"], _ = conv1d_backward(dr, cs)
        dad1, grads["d2w"], grads["d2b"] = conv1d_backward(dr, cd2)
        dzd1 = dad1 * (zd1 > 0)
        _, grads["d1w"], grads["d1b"] = conv1d_backward(dzd1, cd1)
        s = dzd1.sum(axis=2)
        grads["v"] = s.T @ emb
        demb = (s @ params["v"]).reshape(ze2.shape) * (ze2 > 0)
        dae1, grads["e2w"], grads["e2b"] = conv1d_backward(demb, ce2)
        _, grads["e1w"], grads["e1b"] = conv1d_backward(dae1 * (ze1 > 0), ce1)
        return loss, grads

    # -- preprocessing -----------------------------------------------------------

    def _check_pilots(self, X):
        X = np.asarray(X)
        if X.ndim != 3:
            raise InvalidInputError(f"pilot values must have shape (n, n_t, n_pilots), got {X.shape}")
        if X.shape[2] != len(self.pilot_indices):
            raise InvalidInputError(
                f"expected {len(self.pilot_indices)} pilots per antenna, got {X.shape[2]}"
            )
        return X.astype(complex)

    def _prepare(self, X, wek):
        scale = np.sqrt(np.mean(np.abs(X) ** 2, axis=(1, 2)))
        scale = np.where(scale > 0, scale, 1.0)
        xn = X / scale[:, None, None]
        x = np.concatenate([xn.real, xn.imag], axis=1)
        if self.use_wek:
            if wek is None:
                raise InvalidInputError("WEK descriptors are required when use_wek=True")
            feats = wek_features(wek)
            if len(feats) != len(X):
                raise InvalidInputError("one WEK descriptor row is required per sample")
            w = (feats - self.wek_mean_) / self.wek_scale_
        else:
            w = np.zeros((len(X), N_DESCRIPTORS))
        return x, w[:, None, :], scale

    # -- estimator API -----------------------------------------------------------

    def fit(self, X, y, wek=None):
        """Train on pilot values ``X`` (n, n_t, n_p), true channels ``y`` (n, n_t, n_sc)."""
        if self.pilot_indices is None or self.n_subcarriers is None:
            raise InvalidInputError("pilot_indices and n_subcarriers must be set")
        X = self._check_pilots(X)
        y = np.asarray(y, dtype=complex)
        if len(X) == 0:
            raise InvalidInputError("empty training set")
        if y.shape != (X.shape[0], X.shape[1], self.n_subcarriers):
            raise InvalidInputError(f"targets must have shape (n, n_t, {self.n_subcarriers})")
        rng = np.random.default_rng(self.random_state)
        self.n_antennas_ = X.shape[1]
        self.interp_ = interpolation_matrix(self.pilot_indices, self.n_subcarriers)
        if self.use_wek and wek is not None:
            feats = wek_features(wek)
            self.wek_mean_ = feats.mean(axis=0)
            std = feats.std(axis=0)
            self.wek_scale_ = np.where(std > 0, std, 1.0)
        else:
            self.wek_mean_ = np.zeros(N_DESCRIPTORS)
            self.wek_scale_ = np.ones(N_DESCRIPTORS)
        x, w, scale = self._prepare(X, wek)
        target = y / scale[:, None, None]

        self.params_ = self._init_params(rng, self.n_antennas_)
        self.loss_curve_ = []
        n = len(x)
        for _ in range(self.epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, self.batch_size):
                b = order[start:start + self.batch_size]
                loss, grads = self._loss_grad(self.params_, x[b], w[b], self.interp_, target[b])
                sgd_step(self.params_, grads, self.learning_rate)
                total += loss * len(b)
            self.loss_curve_.append(total / n)
        return self

    def training_loss(self, X, y, wek=None):
        """Loss of the current weights on (X, y) in the scaled domain."""
        check_is_fitted(self, "params_")
        X = self._check_pilots(X)
        x, w, scale = self._prepare(X, wek)
        target = np.asarray(y, dtype=complex) / scale[:, None, None]
        loss, _ = self._loss_grad(self.params_, x, w, self.interp_, target)
        return loss

    def predict(self, X, wek=None):
        check_is_fitted(self, "params_")
        X = self._check_pilots(X)
        if X.shape[1] != self.n_antennas_:
            raise InvalidInputError(f"expected {self.n_antennas_} antennas, got {X.shape[1]}")
        x, w, scale = self._prepare(X, wek)
        h_hat, _ = self._forward(self.params_, x, w, self.interp_)
        return h_hat * scale[:, None, None]


def train_recon(dataset, epochs=20, learning_rate=0.1, seed=0, use_wek=True, **kwargs):
    """Fit a :class:`CSIReconstructor` on ``[(partial_csi, wek_entry, h_true), ...]``."""
    if len(dataset) == 0:
        raise InvalidInputError("empty training dataset")
    first = dataset[0][0]
    X = np.stack([p.values for p, _, _ in dataset])
    wek = np.stack([np.asarray(_as_vector(e)) for _, e, _ in dataset])
    y = np.stack([np.asarray(h) for _, _, h in dataset])
    net = CSIReconstructor(pilot_indices=np.asarray(first.indices), n_subcarriers=first.n_subcarriers,
                           epochs=epochs, learning_rate=learning_rate, use_wek=use_wek,
                           random_state=seed, **kwargs)
    return net.fit(X, y, wek=wek)


def reconstruct_csi(net, partial, wek_entry):
    """Full N_t x N_sc estimate for one link from its partial CSI and WEK entry."""
    if partial.n_subcarriers != net.n_subcarriers or len(partial.indices) != len(net.pilot_indices):
        raise InvalidInputError("partial CSI does not match the network's pilot configuration")
    wek = np.asarray(_as_vector(wek_entry))[None, :]
    return net.predict(partial.values[None], wek=wek)[0]


def _as_vector(entry):
    return entry.as_array() if hasattr(entry, "as_array") else np.asarray(entry, dtype=float)
