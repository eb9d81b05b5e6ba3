"""Fading-channel generation and SNR/variance bookkeeping.

All links are Rayleigh: the direct source-to-receiver taps f, the
source-to-backscatter-device tap(s) v, and the device-to-receiver taps g are
independent circularly symmetric complex Gaussians.  SNRs enter in dB at the
interface and are converted once; the noise variance and the g-link variance
are derived from the direct-link SNR gamma_d and the backscatter-to-direct
ratio delta_gamma so that both targets hold exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * np.log10(x)


@dataclass(frozen=True)
class SystemParams:
    """Scalar system constants for one operating point.

    ``sigma2`` and ``beta_g`` are derived in :meth:`create` from the dB-valued
    SNR targets; the identities gamma_d = P_s*beta_f/sigma2 and
    gamma_b/gamma_d = delta_gamma then hold by construction.
    """

    M: int
    K: int
    alpha: complex
    P_s: float
    beta_f: float
    beta_v: float
    beta_g: float
    gamma_d_db: float
    delta_gamma_db: float
    sigma2: float

    def __post_init__(self):
        if self.M < 1 or self.K < 1:
            raise ConfigurationError("M and K must be at least 1")
        if self.P_s <= 0 or self.beta_f <= 0 or self.beta_v <= 0 or self.beta_g < 0:
            raise ConfigurationError("powers and channel variances must be positive")
        if abs(self.alpha) > 1 + 1e-12:
            raise ConfigurationError("|alpha| must not exceed 1")

    @classmethod
    def create(cls, *, M: int = 4, K: int = 1, alpha: complex = 0.2 + 0.3j,
               P_s: float = 1.0, beta_f: float = 1e-7, beta_v: float = 1e-5,
               gamma_d_db: float = 10.0, delta_gamma_db: float = -10.0) -> "SystemParams":
        gamma_d = db_to_linear(gamma_d_db)
        delta_gamma = db_to_linear(delta_gamma_db)
        sigma2 = P_s * beta_f / gamma_d
        # gamma_b = |alpha|^2 P_s beta_v beta_g / sigma2 = delta_gamma * gamma_d
        beta_g = delta_gamma * gamma_d * sigma2 / (abs(alpha) ** 2 * P_s * beta_v)
        return cls(M=M, K=K, alpha=alpha, P_s=P_s, beta_f=beta_f, beta_v=beta_v,
                   beta_g=beta_g, gamma_d_db=gamma_d_db,
                   delta_gamma_db=delta_gamma_db, sigma2=sigma2)

    @property
    def gamma_d(self) -> float:
        return self.P_s * self.beta_f / self.sigma2

    @property
    def gamma_b(self) -> float:
        return abs(self.alpha) ** 2 * self.P_s * self.beta_v * self.beta_g / self.sigma2

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.sigma2))


@dataclass(frozen=True)
class FlatChannel:
    """One flat-fading realization: direct vector h1 and backscatter vector h2."""

    h1: np.ndarray
    h2: np.ndarray

    @property
    def H(self) -> np.ndarray:
        """M x 2 composite matrix [h1, h2]."""
        return np.stack([self.h1, self.h2], axis=-1)

    @property
    def M(self) -> int:
        return self.h1.shape[-1]


def sample_cscg(rng: np.random.Generator, variance: float, size=None) -> np.ndarray:
    """Circularly symmetric complex Gaussian draws with the given total variance."""
    if variance < 0:
        raise ValueError("variance must be non-negative")
    scale = np.sqrt(variance / 2.0)
    re = rng.standard_normal(size)
    im = rng.standard_normal(size)
    return scale * (re + 1j * im)


def draw_flat_channels(params: SystemParams, rng: np.random.Generator,
                       n: int) -> FlatChannel:
    """Draw ``n`` independent flat channels; h1/h2 have shape (n, M).

    h1 = sqrt(P_s) f and h2 = sqrt(P_s) alpha v g with f_m ~ CN(0, beta_f),
    v ~ CN(0, beta_v) shared across antennas, g_m ~ CN(0, beta_g).
    """
    f = sample_cscg(rng, params.beta_f, (n, params.M))
    v = sample_cscg(rng, params.beta_v, (n, 1))
    g = sample_cscg(rng, params.beta_g, (n, params.M))
    root_ps = np.sqrt(params.P_s)
    return FlatChannel(h1=root_ps * f, h2=root_ps * params.alpha * v * g)


def draw_flat_channel(params: SystemParams, rng: np.random.Generator) -> FlatChannel:
    """Draw a single flat channel realization with h1/h2 of shape (M,)."""
    ch = draw_flat_channels(params, rng, 1)
    return FlatChannel(h1=ch.h1[0], h2=ch.h2[0])


@dataclass(frozen=True)
class OfdmParams:
    """OFDM dimensioning plus the two delays of the backscatter path.

    ``d`` is the extra propagation delay of the backscatter-link signal at
    the receiver, ``d0`` the device's own switching offset relative to the
    OFDM symbol boundary.  The cyclic prefix absorbs the backscatter delay
    chain only up to ``d_max``.
    """

    N: int = 64
    N_c: int = 16
    d: int = 0
    d0: int = 0
    L_f: int = 8
    L_v: int = 8
    L_g: int = 1
    f_s: float = 1.0

    def __post_init__(self):
        if self.N < 1 or self.N_c < 0:
            raise ConfigurationError("N and N_c must be positive")
        if min(self.L_f, self.L_v, self.L_g) < 1:
            raise ConfigurationError("tap counts must be at least 1")
        if self.L_v + self.L_g - 2 >= self.N_c:
            raise ConfigurationError(
                "backscatter tap chain exceeds the cyclic-prefix budget")
        if self.d < 0 or self.d0 < 0:
            raise ConfigurationError("delays must be non-negative")

    @property
    def d_max(self) -> int:
        return self.N_c - self.L_v - self.L_g + 2

    @property
    def abd_rate(self) -> float:
        """A-BD symbol rate: one symbol per CP-extended OFDM symbol."""
        return self.f_s / (self.N + self.N_c)


@dataclass(frozen=True)
class SelectiveChannel:
    """One frequency-selective realization with per-subcarrier responses.

    ``lam[m, k]`` is the direct-link response at subcarrier k, ``delta[m, k]``
    the composite backscatter response (v-link times g-link times alpha).
    ``h_b`` additionally carries the delay phase exp(-2j pi d k / N).
    """

    f_taps: np.ndarray   # (M, L_f), includes sqrt(P_s)
    v_taps: np.ndarray   # (L_v,)
    g_taps: np.ndarray   # (M, L_g)
    lam: np.ndarray      # (M, N)
    delta: np.ndarray    # (M, N)
    h_d: np.ndarray      # (N, M)
    h_b: np.ndarray      # (N, M)
    d: int = field(default=0)

    @property
    def M(self) -> int:
        return self.f_taps.shape[0]

    @property
    def N(self) -> int:
        return self.lam.shape[1]


def _taps_dft(taps: np.ndarray, N: int) -> np.ndarray:
    """Frequency response sum_l taps[..., l] e^{-2j pi k l / N} for k = 0..N-1."""
    L = taps.shape[-1]
    k = np.arange(N)
    twiddle = np.exp(-2j * np.pi * np.outer(np.arange(L), k) / N)
    return taps @ twiddle


def draw_selective_channels(params: SystemParams, ofdm: OfdmParams,
                            rng: np.random.Generator, n: int):
    """Draw ``n`` multipath realizations as stacked raw tap arrays.

    Each link's total variance is split uniformly across its taps.  Returns
    (f_taps, v_taps, g_taps) with shapes (n, M, L_f), (n, L_v), (n, M, L_g).
    Transmit power and the reflection coefficient are applied downstream.
    """
    f = sample_cscg(rng, params.beta_f / ofdm.L_f, (n, params.M, ofdm.L_f))
    v = sample_cscg(rng, params.beta_v / ofdm.L_v, (n, ofdm.L_v))
    g = sample_cscg(rng, params.beta_g / ofdm.L_g, (n, params.M, ofdm.L_g))
    return f, v, g


def selective_channel_from_taps(f_taps, v_taps, g_taps, params: SystemParams,
                                ofdm: OfdmParams) -> SelectiveChannel:
    """Build per-subcarrier responses from one set of raw taps.

    Shapes (M, L_f), (L_v,), (M, L_g).  ``lam``/``delta`` are pure channel
    responses (delta includes alpha); ``h_d``/``h_b`` additionally carry
    sqrt(P_s) and, on the backscatter side, the delay phase, so that the
    unit-power frequency-domain symbol model applies directly.
    """
    h_d, h_b, lam, delta = _responses(f_taps[None], v_taps[None], g_taps[None],
                                      params, ofdm, keep_raw=True)
    return SelectiveChannel(
        f_taps=np.asarray(f_taps), v_taps=np.asarray(v_taps),
        g_taps=np.asarray(g_taps),
        lam=lam[0], delta=delta[0], h_d=h_d[0], h_b=h_b[0], d=ofdm.d,
    )


def draw_selective_channel(params: SystemParams, ofdm: OfdmParams,
                           rng: np.random.Generator) -> SelectiveChannel:
    """Draw one frequency-selective channel realization."""
    f, v, g = draw_selective_channels(params, ofdm, rng, 1)
    return selective_channel_from_taps(f[0], v[0], g[0], params, ofdm)


def _responses(f_taps, v_taps, g_taps, params: SystemParams, ofdm: OfdmParams,
               keep_raw: bool = False):
    N = ofdm.N
    lam = _taps_dft(f_taps, N)                       # (n, M, N)
    v_freq = _taps_dft(v_taps, N)                    # (n, N)
    g_freq = _taps_dft(g_taps, N)                    # (n, M, N)
    delta = params.alpha * v_freq[:, None, :] * g_freq
    phase = np.exp(-2j * np.pi * ofdm.d * np.arange(N) / N)
    root_ps = np.sqrt(params.P_s)
    h_d = root_ps * np.swapaxes(lam, -1, -2)         # (n, N, M)
    h_b = root_ps * np.swapaxes(delta * phase[None, None, :], -1, -2)
    if keep_raw:
        return h_d, h_b, lam, delta
    return h_d, h_b


def subcarrier_responses(f_taps, v_taps, g_taps, params: SystemParams,
                         ofdm: OfdmParams):
    """Batched per-subcarrier responses h_d, h_b of shape (n, N, M).

    Same definitions as :func:`selective_channel_from_taps`, including the
    exp(-2j pi d k / N) delay phase on the backscatter side.
    """
    return _responses(f_taps, v_taps, g_taps, params, ofdm)
