"""Sample-level OFDM chain and the frequency-selective two-step ML detector.

The transmit side is a unitary inverse DFT plus cyclic prefix.  Reception is
emulated at sample level: the direct path convolves the CP-extended stream
with the f taps; the backscatter path convolves with the v taps, multiplies
by the device's square-wave symbol (switching d0 samples after the symbol
boundary), convolves with the g taps, and arrives d samples late.  A
one-frame history makes inter-block interference representable, which is
what separates delays inside the CP budget from delays beyond it.

Batched ``*_indices`` kernels mirror the flat-fading module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import OfdmParams, SelectiveChannel, SystemParams
from .errors import DegenerateChannelError
from .flat_detectors import DetectionResult
from .modulation import BPSK, QPSK, Alphabet, quantize_indices


@dataclass(frozen=True)
class OfdmFrame:
    """One OFDM symbol with the A-BD symbol covering it."""

    s: np.ndarray        # (N,) subcarrier symbols
    c: complex
    s_bits: np.ndarray   # (N, bits per symbol)
    c_bits: np.ndarray   # (1,)
    samples: np.ndarray  # (N + N_c,) CP-extended unit-power time samples


@dataclass(frozen=True)
class SubcarrierBlock:
    """Demodulated per-subcarrier samples, one M-vector per subcarrier."""

    z: np.ndarray  # (N, M)


def ofdm_modulate(s, params: OfdmParams) -> np.ndarray:
    """Unitary inverse transform plus cyclic prefix; (..., N) -> (..., N + N_c)."""
    s = np.asarray(s, dtype=np.complex128)
    if s.shape[-1] != params.N:
        raise ValueError("symbol vector length must equal the subcarrier count")
    x = np.fft.ifft(s, norm="ortho", axis=-1)
    return np.concatenate([x[..., params.N - params.N_c:], x], axis=-1)


def random_ofdm_frame(rng: np.random.Generator, params: OfdmParams,
                      source: Alphabet = QPSK, abd: Alphabet = BPSK) -> OfdmFrame:
    s_bits = rng.integers(0, 2, size=(params.N, source.bits_per_symbol))
    c_bits = rng.integers(0, 2, size=(1,))
    s = source.modulate(s_bits)
    c = complex(abd.symbols[int(c_bits[0])])
    return OfdmFrame(s=s, c=c, s_bits=s_bits, c_bits=c_bits,
                     samples=ofdm_modulate(s, params))


def _shift_conv(x, taps):
    """Linear convolution along the last axis, truncated to the input length.

    ``taps`` has one more leading batch axis structure than scalar: shapes
    broadcast as x (..., L_x) with taps (..., L_t).
    """
    L_x = x.shape[-1]
    L_t = taps.shape[-1]
    out_shape = np.broadcast_shapes(x.shape[:-1], taps.shape[:-1]) + (L_x,)
    out = np.zeros(out_shape, dtype=np.complex128)
    for l in range(L_t):
        out[..., l:] += taps[..., l:l + 1] * x[..., :L_x - l]
    return out


def simulate_reception_batch(stream, c_prev, c_cur, f_taps, v_taps, g_taps,
                             params: SystemParams, ofdm: OfdmParams,
                             rng: np.random.Generator | None) -> np.ndarray:
    """Receive the current frame for a batch of independent trials.

    ``stream`` is the two-frame CP-extended transmit stream (T, 2(N+N_c))
    with the current frame in the second half; taps are the raw draws
    (T, M, L_f), (T, L_v), (T, M, L_g).  Returns the current frame's
    per-antenna samples (T, M, N + N_c).  ``rng=None`` skips the noise.
    """
    B = ofdm.N + ofdm.N_c
    T = stream.shape[0]
    root_ps = np.sqrt(params.P_s)

    direct = root_ps * _shift_conv(stream[:, None, :], f_taps)   # (T, M, 2B)

    incident = _shift_conv(stream, v_taps)                       # (T, 2B)
    boundary = B + ofdm.d0
    c_wave = np.empty_like(stream)
    c_wave[:, :boundary] = np.asarray(c_prev)[:, None]
    c_wave[:, boundary:] = np.asarray(c_cur)[:, None]
    modulated = incident * c_wave
    back = _shift_conv(modulated[:, None, :], g_taps)            # (T, M, 2B)
    delayed = np.zeros_like(back)
    if ofdm.d < 2 * B:
        delayed[..., ofdm.d:] = back[..., :2 * B - ofdm.d]
    y = direct + params.alpha * root_ps * delayed

    y = y[..., B:]                                               # current frame
    if rng is not None and params.sigma2 > 0:
        scale = np.sqrt(params.sigma2 / 2.0)
        y = y + scale * (rng.standard_normal((T, f_taps.shape[1], B))
                         + 1j * rng.standard_normal((T, f_taps.shape[1], B)))
    return y


def simulate_ofdm_reception(frames, channel: SelectiveChannel,
                            params: SystemParams, ofdm: OfdmParams,
                            rng: np.random.Generator | None) -> np.ndarray:
    """Receive one frame given its predecessor; returns (M, N + N_c) samples.

    ``frames`` is the pair (previous, current); the previous frame supplies
    the convolution tails and the pre-switch A-BD value.
    """
    prev, cur = frames
    stream = np.concatenate([prev.samples, cur.samples])[None, :]
    y = simulate_reception_batch(
        stream, np.array([prev.c]), np.array([cur.c]),
        channel.f_taps[None], channel.v_taps[None], channel.g_taps[None],
        params, ofdm, rng)
    return y[0]


def dft_demodulate(samples, params: OfdmParams) -> SubcarrierBlock:
    """Unitary forward transform of the post-CP window; (M, >=N_c+N) -> (N, M)."""
    samples = np.asarray(samples, dtype=np.complex128)
    if samples.shape[-1] < params.N_c + params.N:
        raise ValueError("need at least N_c + N samples per antenna")
    z = dft_demodulate_batch(samples[None], params)
    return SubcarrierBlock(z=z[0])


def dft_demodulate_batch(samples, params: OfdmParams) -> np.ndarray:
    """Batched window-and-transform: (T, M, >=N_c+N) -> (T, N, M)."""
    window = samples[..., params.N_c:params.N_c + params.N]
    z = np.fft.fft(window, norm="ortho", axis=-1)
    return np.swapaxes(z, -1, -2)


def ofdm_ml_indices(z, h_d, h_b, source: Alphabet = QPSK, abd: Alphabet = BPSK):
    """Batched two-step ML over subcarriers: per-subcarrier conditional MRC,
    then the A-BD candidate with the smallest total residual.

    Shapes: z, h_d, h_b all (T, N, M).  Returns (s_idx (T, N), c_idx (T,)).
    """
    residuals = []
    cond_s = []
    for c in abd.symbols:
        h_eq = h_d + c * h_b
        nh = np.sum(np.abs(h_eq) ** 2, axis=-1)
        zc = np.einsum("tnm,tnm->tn", np.conj(h_eq), z) / nh
        s_idx = quantize_indices(zc, source)
        s_sym = source.symbols[s_idx]
        diff = z - h_eq * s_sym[..., None]
        residuals.append(np.sum(np.abs(diff) ** 2, axis=(1, 2)))
        cond_s.append(s_idx)
    residuals = np.stack(residuals, axis=0)
    c_idx = np.argmin(residuals, axis=0)
    s_idx = np.stack(cond_s, axis=0)[c_idx, np.arange(c_idx.shape[0])]
    return s_idx, c_idx


def ofdm_simo_indices(z, h_d, source: Alphabet = QPSK):
    """Per-subcarrier MRC on the direct link only (no backscatter device)."""
    nh = np.sum(np.abs(h_d) ** 2, axis=-1)
    zc = np.einsum("tnm,tnm->tn", np.conj(h_d), z) / nh
    return quantize_indices(zc, source)


def detect_ofdm_ml(block: SubcarrierBlock, channel: SelectiveChannel,
                   source: Alphabet = QPSK, abd: Alphabet = BPSK) -> DetectionResult:
    """Frequency-selective ML detector for one demodulated block."""
    h_d, h_b = channel.h_d, channel.h_b
    for c in abd.symbols:
        if np.any(np.sum(np.abs(h_d + c * h_b) ** 2, axis=-1) == 0):
            raise DegenerateChannelError(
                "equivalent channel vanishes on a subcarrier")
    s_idx, c_idx = ofdm_ml_indices(block.z[None], h_d[None], h_b[None],
                                   source, abd)
    c_idx = int(c_idx[0])
    return DetectionResult(
        s_hat=source.symbols[s_idx[0]],
        c_hat=complex(abd.symbols[c_idx]),
        s_bits_hat=source.bits_of(s_idx[0]),
        c_bit_hat=int(abd.bits_of(np.array(c_idx))[0]),
        detector_id="ofdm-ml",
    )
