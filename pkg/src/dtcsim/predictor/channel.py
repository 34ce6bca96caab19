"""Statistical channel synthesis from predicted path loss, and pilot handling."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .._validation import check_count, check_positive
from ..exceptions import InvalidInputError
from ..propagation import aod, array_response

__all__ = [
    "RicianConfig",
    "PilotPattern",
    "PartialCSI",
    "aod",
    "gain_from_pl",
    "synthesize_predicted_channel",
    "synthesize_predicted_links",
    "sample_pilots",
    "pilot_noise_variance",
    "reference_noise_variance",
    "interpolation_matrix",
    "interpolate_pilots",
]


@dataclass(frozen=True)
class RicianConfig:
    k_factor: float = 10.0
    seed: int = 0

    def __post_init__(self):
        check_positive(self.k_factor, "k_factor", strict=False)


@dataclass(frozen=True)
class PilotPattern:
    """Uniform frequency comb starting at subcarrier 0, pilots on every antenna."""

    ratio: Fraction
    n_subcarriers: int

    def __post_init__(self):
        ratio = Fraction(self.ratio).limit_denominator(10_000)
        if not 0 < ratio <= 1:
            raise InvalidInputError(f"pilot ratio must lie in (0, 1], got {self.ratio}")
        check_count(self.n_subcarriers, "n_subcarriers")
        object.__setattr__(self, "ratio", ratio)

    @property
    def count(self):
        return math.ceil(self.ratio * self.n_subcarriers)

    @property
    def indices(self):
        k = np.arange(self.count)
        return (k * self.n_subcarriers) // self.count


@dataclass(frozen=True)
class PartialCSI:
    values: np.ndarray  # (..., n_t, n_pilots) complex
    indices: np.ndarray
    n_subcarriers: int

    def zero_filled(self):
        out = np.zeros((self.values.shape[0], self.n_subcarriers), dtype=complex)
        out[:, self.indices] = self.values
        return out


def gain_from_pl(pl_db, n_subcarriers):
    """Average per-subcarrier power gain ``10**(-PL/10) / N_sc``."""
    check_count(n_subcarriers, "n_subcarriers")
    return 10.0 ** (-np.asarray(pl_db, dtype=float) / 10.0) / n_subcarriers


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def synthesize_predicted_channel(gain, theta, blocked, cfg, n_antennas, spacing, wavelength, rng, n_subcarriers=None):
    """Rician (LoS) or Rayleigh (blocked) channel scaled by ``sqrt(gain)``.

    Returns a vector of length ``n_antennas``, or an (n_antennas, n_subcarriers)
    matrix with independent diffuse draws per subcarrier when
    ``n_subcarriers`` is given.
    """
    if gain < 0:
        raise InvalidInputError("gain must be >= 0")
    shape = (n_antennas,) if n_subcarriers is None else (n_antennas, n_subcarriers)
    g = _cn(rng, shape)
    amp = math.sqrt(gain)
    if blocked:
        return amp * g
    k = cfg.k_factor
    a = array_response(theta, n_antennas, spacing, wavelength)
    if n_subcarriers is not None:
        a = a[:, None]
    return amp * (math.sqrt(k / (k + 1.0)) * a + math.sqrt(1.0 / (k + 1.0)) * g)


def synthesize_predicted_links(gain, theta, blocked, cfg, n_antennas, spacing, wavelength, rng, n_subcarriers):
    """Vectorised synthesis for many links, flat across subcarriers.

    ``gain``, ``theta``, ``blocked`` and ``spacing`` share one leading shape
    L.  Each link draws one N_t vector as in
    :func:`synthesize_predicted_channel` and repeats it on every subcarrier;
    the result has shape L + (n_antennas, n_subcarriers), complex64.
    """
    gain = np.asarray(gain, dtype=float)
    if np.any(gain < 0):
        raise InvalidInputError("gain must be >= 0")
    check_positive(wavelength, "wavelength")
    check_count(n_subcarriers, "n_subcarriers")
    blocked = np.asarray(blocked, dtype=bool)
    k = cfg.k_factor
    g = _cn(rng, gain.shape + (n_antennas,))
    m = np.arange(n_antennas)
    phase = 2.0 * np.pi * np.asarray(spacing, dtype=float)[..., None] / wavelength * m * np.sin(
        np.asarray(theta, dtype=float))[..., None]
    los = math.sqrt(k / (k + 1.0)) * np.exp(1j * phase) + math.sqrt(1.0 / (k + 1.0)) * g
    h = np.sqrt(gain)[..., None] * np.where(blocked[..., None], g, los)
    return np.repeat(h.astype(np.complex64)[..., None], n_subcarriers, axis=-1)


def pilot_noise_variance(h, snr_db):
    """Per-entry noise variance giving ``snr_db`` relative to the mean power of ``h``."""
    return float(np.mean(np.abs(h) ** 2)) / 10.0 ** (snr_db / 10.0)


def reference_noise_variance(link_powers, snr_db):
    """Fixed noise floor giving ``snr_db`` at the median of ``link_powers``.

    Weaker links then see proportionally noisier pilots, as with a real
    receiver noise floor.
    """
    return float(np.median(np.asarray(link_powers, dtype=float))) / 10.0 ** (snr_db / 10.0)


def sample_pilots(h_true, pattern, noise_variance, rng):
    """Read ``h_true`` (..., n_sc) at the pilot comb and add complex Gaussian noise."""
    h_true = np.asarray(h_true)
    if h_true.shape[-1] != pattern.n_subcarriers:
        raise InvalidInputError("pilot pattern does not match the channel's subcarrier count")
    idx = pattern.indices
    values = h_true[..., idx].astype(complex)
    if noise_variance > 0:
        values = values + math.sqrt(noise_variance) * _cn(rng, values.shape)
    return PartialCSI(values, idx, pattern.n_subcarriers)


def interpolation_matrix(indices, n_subcarriers):
    """(n_subcarriers, n_pilots) linear interpolation operator with edge hold."""
    indices = np.asarray(indices)
    f = np.arange(n_subcarriers)
    eye = np.eye(len(indices))
    return np.column_stack([np.interp(f, indices, eye[j]) for j in range(len(indices))])


def interpolate_pilots(partial):
    """Linear interpolation across pilot subcarriers (the no-DTC baseline)."""
    m = interpolation_matrix(partial.indices, partial.n_subcarriers)
    return partial.values @ m.T
