"""Closed-form conditional BER expressions and channel-averaged evaluation.

Every formula here is conditioned on one channel realization and assumes
Gray-mapped QPSK at the RF source and BPSK at the A-BD.  The two-step ML pair
solves a quadratic self-consistency between the source BER and the A-BD BER;
the linear and SIC detectors have direct expressions.  Channel averages are
plain Monte Carlo means over independent channel draws.

All kernels broadcast over leading axes, with the antenna axis last.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .channel import FlatChannel, SelectiveChannel, SystemParams, draw_flat_channels
from .errors import ConfigurationError, DegenerateChannelError


def q_function(z):
    """Gaussian tail probability Q(z) = P(N(0,1) > z)."""
    return 0.5 * erfc(np.asarray(z, dtype=np.float64) / np.sqrt(2.0))


@dataclass(frozen=True)
class BerPair:
    """Conditional bit error rates of the source stream and the A-BD stream."""

    pe_s: float
    pe_c: float


@dataclass(frozen=True)
class MlCoefficients:
    """Conditional error-rate building blocks of the two-step ML detector.

    a1/a2 are the source BERs given a correct/incorrect A-BD decision, b1/b2
    the A-BD BERs given correct/doubly-wrong source decisions; C0, C1, C2 are
    the coefficients of the self-consistency quadratic in the source BER.
    """

    a1: float
    a2: float
    b1: float
    b2: float
    C0: float
    C1: float
    C2: float


def _norms(h1, h2):
    n1 = np.sum(np.abs(h1) ** 2, axis=-1)
    n2 = np.sum(np.abs(h2) ** 2, axis=-1)
    return n1, n2


def _a_coeffs(h1, h2, sigma):
    """Source-stream BER given correct (a1) and wrong (a2) A-BD decision."""
    hp = h1 + h2
    hm = h1 - h2
    np_norm = np.sqrt(np.sum(np.abs(hp) ** 2, axis=-1))
    nm_norm = np.sqrt(np.sum(np.abs(hm) ** 2, axis=-1))
    a1 = 0.5 * (q_function(np_norm / sigma) + q_function(nm_norm / sigma))
    ip1 = np.einsum("...m,...m->...", np.conj(hm), hp)
    th_r1 = np.real(ip1) / nm_norm ** 2
    th_i1 = np.imag(ip1) / nm_norm ** 2
    ip2 = np.einsum("...m,...m->...", np.conj(hp), hm)
    th_r2 = np.real(ip2) / np_norm ** 2
    th_i2 = np.imag(ip2) / np_norm ** 2
    a2 = 0.25 * (q_function(nm_norm * (th_r1 + th_i1) / sigma)
                 + q_function(nm_norm * (th_r1 - th_i1) / sigma)
                 + q_function(np_norm * (th_r2 + th_i2) / sigma)
                 + q_function(np_norm * (th_r2 - th_i2) / sigma))
    return a1, a2


def _b_coeffs(h1, h2, sigma):
    """A-BD BER after direct-link cancellation, for correct (b1) and
    doubly-wrong (b2) source decisions."""
    _, n2 = _norms(h1, h2)
    n2_norm = np.sqrt(n2)
    scale = np.sqrt(2.0) * n2_norm / sigma
    b1 = q_function(scale)
    rho = np.real(np.einsum("...m,...m->...", np.conj(h2), h1)) / n2
    b2 = 0.5 * (q_function(scale * (-1.0 + 2.0 * rho))
                + q_function(scale * (-1.0 - 2.0 * rho)))
    return b1, b2


def ml_coefficients_arrays(h1, h2, sigma):
    """Batched (a1, a2, b1, b2, C0, C1, C2)."""
    a1, a2 = _a_coeffs(h1, h2, sigma)
    b1, b2 = _b_coeffs(h1, h2, sigma)
    c0 = b1 * a2 + a1 * (1.0 - b1)
    c1 = (1.0 - 2.0 * b1) * (a2 - a1) - 1.0
    c2 = (b1 + b2 - 1.0) * (a2 - a1)
    return a1, a2, b1, b2, c0, c1, c2


def ml_coefficients(channel: FlatChannel, sigma: float) -> MlCoefficients:
    vals = ml_coefficients_arrays(channel.h1, channel.h2, sigma)
    return MlCoefficients(*(float(v) for v in vals))


def ml_ber(h1, h2, sigma):
    """Two-step ML BER pair from the quadratic root (batched).

    The root (-C1 - sqrt(C1^2 - 4 C2 C0)) / (2 C2) is evaluated in the
    rationalized form 2 C0 / (-C1 + sqrt(...)), which stays accurate when all
    coefficients underflow together, and the A-BD rate is recovered through
    the companion self-consistency relation instead of the ratio
    (pe_s - a1)/(a2 - a1); the two are identical at the root but the ratio is
    0/0-unstable whenever both source coefficients vanish.
    """
    a1, a2, b1, b2, c0, c1, c2 = ml_coefficients_arrays(h1, h2, sigma)
    disc = c1 ** 2 - 4.0 * c2 * c0
    den = -c1 + np.sqrt(disc)
    # den > 0 whenever C1 < 0; it reaches 0 only in the fully saturated
    # corner (a1, b1 underflown with a2 = 1) where the root itself is 0
    with np.errstate(divide="ignore", invalid="ignore"):
        pe_s = np.where(den > 0, 2.0 * c0 / np.where(den > 0, den, 1.0), 0.0)
    pe_c = (1.0 - pe_s) ** 2 * b1 + pe_s * (1.0 - pe_s) + pe_s ** 2 * b2
    return pe_s, pe_c


def ber_ml_flat(channel: FlatChannel, sigma: float) -> BerPair:
    """Conditional BERs of the (two-step) ML detector at one channel.

    The degeneracy guard is relative: a2 coincides with a1 (to working
    precision) exactly when the backscatter stream is unobservable, e.g.
    h2 = 0.  An absolute threshold would misfire at high SNR where both
    coefficients are legitimately tiny.
    """
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    a1, a2 = _a_coeffs(channel.h1, channel.h2, sigma)
    if abs(a2 - a1) <= 1e-15 * max(float(a1), float(a2)):
        raise DegenerateChannelError("a2 == a1; the A-BD stream is unobservable")
    pe_s, pe_c = ml_ber(channel.h1, channel.h2, sigma)
    return BerPair(float(pe_s), float(pe_c))


def mrc_ber(h1, h2, sigma):
    """MRC detector BER pair (batched).

    A vanishing backscatter channel collapses pe_s to the interference-free
    Q(|h1|/sigma) and leaves pe_c undefined (NaN).
    """
    n1, n2 = _norms(h1, h2)
    n1_norm = np.sqrt(n1)
    g = np.einsum("...m,...m->...", np.conj(h1), h2)
    r = np.real(g) / n1
    i = np.imag(g) / n1
    base = n1_norm / sigma
    pe_s = 0.25 * (q_function(base * (1.0 + r - i))
                   + q_function(base * (1.0 + r + i))
                   + q_function(base * (1.0 - r + i))
                   + q_function(base * (1.0 - r - i)))
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.real(np.einsum("...m,...m->...", np.conj(h2), h1)) / n2
        scale = np.sqrt(2.0) * np.sqrt(n2) / sigma
        ok = (1.0 - pe_s) ** 2
        bad = pe_s ** 2
        pe_c = (0.5 * ok * (q_function(scale * (1.0 + rho)) + q_function(scale * (1.0 - rho)))
                + 0.5 * bad * (q_function(scale * (-1.0 - rho)) + q_function(scale * (-1.0 + rho)))
                + pe_s * (1.0 - pe_s))
    return pe_s, np.clip(pe_c, 0.0, 1.0)


def ber_mrc_flat(channel: FlatChannel, sigma: float) -> BerPair:
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    pe_s, pe_c = mrc_ber(channel.h1, channel.h2, sigma)
    return BerPair(float(pe_s), float(pe_c))


def zf_ber(h1, h2, sigma):
    """ZF detector BER pair via the inverse Gram matrix diagonal (batched)."""
    n1, n2 = _norms(h1, h2)
    g12 = np.einsum("...m,...m->...", np.conj(h1), h2)
    det = n1 * n2 - np.abs(g12) ** 2
    a11 = n2 / det
    a22 = n1 / det
    pe_s = q_function(1.0 / (sigma * np.sqrt(a11)))
    arg = np.sqrt(2.0) / (sigma * np.sqrt(a22))
    pe_c = ((1.0 - pe_s) ** 2 * q_function(arg)
            + pe_s * (1.0 - pe_s)
            + pe_s ** 2 * q_function(-arg))
    return pe_s, pe_c


def ber_zf_flat(channel: FlatChannel, sigma: float) -> BerPair:
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    if channel.M < 2:
        raise DegenerateChannelError("ZF needs at least two antennas")
    n1 = np.sum(np.abs(channel.h1) ** 2)
    n2 = np.sum(np.abs(channel.h2) ** 2)
    det = n1 * n2 - np.abs(np.vdot(channel.h1, channel.h2)) ** 2
    if det <= 1e-12 * max(n1 * n2, 1e-300):
        raise DegenerateChannelError("rank-deficient channel; ZF undefined")
    pe_s, pe_c = zf_ber(channel.h1, channel.h2, sigma)
    return BerPair(float(pe_s), float(pe_c))


def mmse_sinrs(h1, h2, sigma):
    """Per-stream MMSE output SINRs, each inverse evaluated in closed form
    through the rank-one update identity."""
    n1, n2 = _norms(h1, h2)
    cross = np.abs(np.einsum("...m,...m->...", np.conj(h2), h1)) ** 2
    sigma2 = sigma ** 2
    gamma1 = (n1 - cross / (sigma2 + n2)) / sigma2
    gamma2 = (n2 - cross / (sigma2 + n1)) / sigma2
    return gamma1, gamma2


def mmse_ber(h1, h2, sigma):
    """MMSE detector BER pair (batched).

    The source stream sees QPSK at output SINR gamma1, giving Q(sqrt(gamma1))
    per bit.  The A-BD stream uses the same conditional mixture as the other
    linear detectors, evaluated with the actual MMSE filter gains: signal
    gain beta, residual direct-link leakage rho (the MMSE filter does not
    null the direct stream exactly), and the filter noise level.  With a ZF
    filter this collapses to beta = 1, rho = 0 and reproduces the ZF
    expression; treating the leakage as extra Gaussian noise instead would
    bias the A-BD rate by a few percent, which fixed-channel simulation
    resolves easily.
    """
    sigma2 = sigma ** 2
    gamma1, _ = mmse_sinrs(h1, h2, sigma)
    pe_s = q_function(np.sqrt(gamma1))

    n1, n2 = _norms(h1, h2)
    g12 = np.einsum("...m,...m->...", np.conj(h1), h2)
    d0 = n1 + sigma2
    det = d0 * (n2 + sigma2) - np.abs(g12) ** 2
    t2 = (d0[..., None] * np.conj(h2)
          - np.conj(g12)[..., None] * np.conj(h1)) / det[..., None]
    beta = np.real(np.einsum("...m,...m->...", t2, h2))
    rho = np.real(np.einsum("...m,...m->...", t2, h1))
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.sqrt(2.0) / (sigma * np.sqrt(np.sum(np.abs(t2) ** 2, axis=-1)))
        ok = (1.0 - pe_s) ** 2
        bad = pe_s ** 2
        pe_c = (0.5 * ok * (q_function(scale * (beta + rho)) + q_function(scale * (beta - rho)))
                + 0.5 * bad * (q_function(scale * (-beta - rho)) + q_function(scale * (-beta + rho)))
                + pe_s * (1.0 - pe_s))
    return pe_s, pe_c


def ber_mmse_flat(channel: FlatChannel, sigma: float) -> BerPair:
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    pe_s, pe_c = mmse_ber(channel.h1, channel.h2, sigma)
    return BerPair(float(pe_s), float(pe_c))


_STAGE1 = {"mrc": mrc_ber, "zf": zf_ber, "mmse": mmse_ber}


def sic_ber(h1, h2, sigma, first_stage: str):
    """SIC detector BER pair: stage-1 source BER feeds the post-cancellation
    A-BD mixture, which in turn feeds the re-estimated source BER (batched)."""
    try:
        stage1 = _STAGE1[first_stage]
    except KeyError:
        raise ConfigurationError(f"unknown SIC first stage: {first_stage}") from None
    p_s1, _ = stage1(h1, h2, sigma)
    b1, b2 = _b_coeffs(h1, h2, sigma)
    pe_c = (1.0 - p_s1) ** 2 * b1 + p_s1 * (1.0 - p_s1) + p_s1 ** 2 * b2
    a1, a2 = _a_coeffs(h1, h2, sigma)
    pe_s = (1.0 - pe_c) * a1 + pe_c * a2
    return np.clip(pe_s, 0.0, 1.0), np.clip(pe_c, 0.0, 1.0)


def ber_sic_flat(channel: FlatChannel, sigma: float, first_stage: str) -> BerPair:
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    first_stage = first_stage.lower()
    if first_stage == "zf":
        ber_zf_flat(channel, sigma)   # surface the rank guard
    if np.sum(np.abs(channel.h2) ** 2) == 0:
        raise DegenerateChannelError("SIC needs a non-zero backscatter channel")
    pe_s, pe_c = sic_ber(channel.h1, channel.h2, sigma, first_stage)
    return BerPair(float(pe_s), float(pe_c))


def simo_ber(h1, h2, sigma):
    """Direct-link SIMO baseline: MRC on h1 with no backscatter present."""
    n1 = np.sqrt(np.sum(np.abs(h1) ** 2, axis=-1))
    pe_s = q_function(n1 / sigma)
    return pe_s, np.full_like(pe_s, np.nan)


FLAT_FORMULAS = {
    "ml": ml_ber,
    "mrc": mrc_ber,
    "zf": zf_ber,
    "mmse": mmse_ber,
    "mrc-sic": lambda h1, h2, s: sic_ber(h1, h2, s, "mrc"),
    "zf-sic": lambda h1, h2, s: sic_ber(h1, h2, s, "zf"),
    "mmse-sic": lambda h1, h2, s: sic_ber(h1, h2, s, "mmse"),
    "simo-baseline": simo_ber,
}


# ---------------------------------------------------------------------------
# frequency-selective ML (source stream)
# ---------------------------------------------------------------------------

def ofdm_ml_coefficients(h_d, h_b, sigma):
    """Subcarrier-averaged source-BER coefficients (batched over draws).

    ``h_d``/``h_b`` have shape (..., N, M); the per-subcarrier expressions are
    the flat a1/a2 evaluated at each subcarrier pair and averaged over k.
    """
    a1_k, a2_k = _a_coeffs(h_d, h_b, sigma)
    return a1_k.mean(axis=-1), a2_k.mean(axis=-1)


def ber_ml_ofdm(channel: SelectiveChannel, sigma: float, pe_c: float) -> float:
    """Source BER of the frequency-selective ML detector at one channel,
    given an externally supplied A-BD error rate (typically simulated)."""
    if not 0.0 <= pe_c <= 1.0:
        raise ConfigurationError("pe_c must be a probability")
    a1, a2 = ofdm_ml_coefficients(channel.h_d, channel.h_b, sigma)
    return float((1.0 - pe_c) * a1 + pe_c * a2)


# ---------------------------------------------------------------------------
# channel averaging
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AveragedBer:
    """Monte Carlo channel average of a conditional formula."""

    pe_s: float
    pe_c: float
    hw_s: float
    hw_c: float
    n_channels: int


def _mean_hw(values):
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    if values.size > 1:
        hw = 1.96 * float(values.std(ddof=1)) / np.sqrt(values.size)
    else:
        hw = float("inf")
    return mean, hw


def average_ber(formula, params: SystemParams, n_channels: int,
                rng: np.random.Generator) -> AveragedBer:
    """Average a conditional formula over independent channel draws.

    ``formula`` is a name from FLAT_FORMULAS or a callable
    ``(h1, h2, sigma) -> (pe_s, pe_c)`` operating on batched arrays.  Draws
    on which the ML pair is degenerate (a2 == a1) are redrawn.
    """
    if n_channels < 1:
        raise ConfigurationError("n_channels must be at least 1")
    fn = FLAT_FORMULAS[formula] if isinstance(formula, str) else formula
    ch = draw_flat_channels(params, rng, n_channels)
    h1, h2 = ch.h1, ch.h2
    # exactly-zero backscatter draws make the ML pair degenerate; redraw them
    bad = np.sum(np.abs(h2) ** 2, axis=-1) == 0
    for _ in range(100):
        if not bad.any():
            break
        redraw = draw_flat_channels(params, rng, int(bad.sum()))
        h1[bad] = redraw.h1
        h2[bad] = redraw.h2
        bad = np.sum(np.abs(h2) ** 2, axis=-1) == 0
    pe_s, pe_c = fn(h1, h2, params.sigma)
    mean_s, hw_s = _mean_hw(pe_s)
    if np.all(np.isnan(pe_c)):
        mean_c, hw_c = float("nan"), float("nan")
    else:
        mean_c, hw_c = _mean_hw(pe_c)
    return AveragedBer(pe_s=mean_s, pe_c=mean_c, hw_s=hw_s, hw_c=hw_c,
                       n_channels=n_channels)
