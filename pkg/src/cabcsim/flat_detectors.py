"""Flat-fading receivers for the cooperative backscatter link.

All detectors estimate the K source symbols and the single A-BD symbol that
covers them from y_k = h1 s_k + h2 s_k c + u_k, k = 0..K-1, with the
composite channel known at the receiver.

Two layers are exposed: per-block functions returning a
:class:`DetectionResult` (the library contract), and ``*_indices`` kernels
that run many independent trials at once on arrays with a leading trial
axis.  The Monte Carlo driver uses the kernels; both layers share the same
decision rules, including lowest-index tie-breaking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import FlatChannel
from .errors import ConfigurationError, DegenerateChannelError
from .modulation import BPSK, QPSK, Alphabet, quantize_indices

JOINT_ML_SEARCH_LIMIT = 10 ** 6

_NORM_EPS = 1e-300   # squared-norm floor treated as an exactly zero channel


@dataclass(frozen=True)
class ReceivedBlock:
    """K received sample vectors of M antennas each."""

    y: np.ndarray  # (K, M)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.complex128)
        object.__setattr__(self, "y", y)
        if y.ndim != 2:
            raise ValueError("received block must be K x M")
        if not np.all(np.isfinite(y)):
            raise ValueError("received block contains non-finite samples")


@dataclass(frozen=True)
class DetectionResult:
    """Hard decisions for one block."""

    s_hat: np.ndarray     # (K,) source symbols
    c_hat: complex        # A-BD symbol
    s_bits_hat: np.ndarray
    c_bit_hat: int
    detector_id: str


@dataclass(frozen=True)
class LinearDecoder:
    """A 2 x M linear front end separating the direct and backscatter streams."""

    kind: str
    T: np.ndarray  # (2, M)


def _result(s_idx, c_idx, source: Alphabet, abd: Alphabet, detector_id: str) -> DetectionResult:
    s_idx = np.atleast_1d(np.asarray(s_idx))
    c_idx = int(np.asarray(c_idx).reshape(()))
    return DetectionResult(
        s_hat=source.symbols[s_idx],
        c_hat=complex(abd.symbols[c_idx]),
        s_bits_hat=source.bits_of(s_idx),
        c_bit_hat=int(abd.bits_of(np.array(c_idx))[0]),
        detector_id=detector_id,
    )


def _as_batch(y, h1, h2):
    """Promote (K, M) / (M,) inputs to batched (1, K, M) / (1, M)."""
    y = np.asarray(y, dtype=np.complex128)
    h1 = np.asarray(h1, dtype=np.complex128)
    h2 = np.asarray(h2, dtype=np.complex128)
    squeeze = y.ndim == 2
    if squeeze:
        y = y[None]
        h1 = h1[None]
        h2 = h2[None]
    return y, h1, h2, squeeze


# ---------------------------------------------------------------------------
# maximum likelihood
# ---------------------------------------------------------------------------

def two_step_ml_indices(y, h1, h2, source: Alphabet = QPSK, abd: Alphabet = BPSK):
    """Two-step ML decisions for a batch of trials.

    For each A-BD candidate the equivalent channel h1 + h2 c is
    maximum-ratio combined and the source symbols quantized; the candidate
    with the smallest reconstruction residual wins and its conditional
    source decisions are returned.  Exactly reproduces the exhaustive joint
    search because the per-symbol cost separates once c is fixed.

    Shapes: y (T, K, M); h1, h2 (T, M) or broadcastable.  Returns
    (s_idx (T, K), c_idx (T,)).
    """
    residuals = []
    cond_s = []
    for c in abd.symbols:
        h_eq = h1 + h2 * c                                   # (T, M)
        nh = np.sum(np.abs(h_eq) ** 2, axis=-1)              # (T,)
        z = np.einsum("tm,tkm->tk", np.conj(h_eq), y) / nh[:, None]
        s_idx = quantize_indices(z, source)                  # (T, K)
        s_sym = source.symbols[s_idx]
        diff = y - h_eq[:, None, :] * s_sym[:, :, None]
        residuals.append(np.sum(np.abs(diff) ** 2, axis=(1, 2)))
        cond_s.append(s_idx)
    residuals = np.stack(residuals, axis=0)                  # (|A_c|, T)
    c_idx = np.argmin(residuals, axis=0)
    s_idx = np.stack(cond_s, axis=0)[c_idx, np.arange(c_idx.shape[0])]
    return s_idx, c_idx


def joint_ml_indices(y, h1, h2, source: Alphabet = QPSK, abd: Alphabet = BPSK):
    """Exhaustive joint ML over every (s_0..s_{K-1}, c) hypothesis.

    Ties resolve to the lexicographically smallest candidate, ordering the
    tuple with s_0 most significant and c least.  Guarded against search
    spaces beyond JOINT_ML_SEARCH_LIMIT hypotheses.
    """
    T, K, _ = y.shape
    n_s, n_c = source.size, abd.size
    if n_s ** K * n_c > JOINT_ML_SEARCH_LIMIT:
        raise ConfigurationError(
            f"joint ML search space {n_s}^{K} * {n_c} exceeds {JOINT_ML_SEARCH_LIMIT}")
    combos = np.stack(np.meshgrid(*([np.arange(n_s)] * K), indexing="ij"),
                      axis=-1).reshape(-1, K)                # (n_s**K, K) lexicographic
    costs = np.empty((combos.shape[0], n_c, T))
    for ci, c in enumerate(abd.symbols):
        h_eq = h1 + h2 * c                                   # (T, M)
        # per-symbol hypothesis cost ||y_k - h_eq s||^2, shape (T, K, n_s)
        yy = np.sum(np.abs(y) ** 2, axis=-1)
        hy = np.einsum("tm,tkm->tk", np.conj(h_eq), y)
        nh = np.sum(np.abs(h_eq) ** 2, axis=-1)
        per = (yy[:, :, None]
               - 2.0 * np.real(hy[:, :, None] * np.conj(source.symbols)[None, None, :])
               + nh[:, None, None] * (np.abs(source.symbols) ** 2)[None, None, :])
        per = per.transpose(1, 2, 0)                         # (K, n_s, T)
        acc = np.zeros((combos.shape[0], T))
        for k in range(K):
            acc += per[k, combos[:, k], :]
        costs[:, ci, :] = acc
    flat = costs.reshape(-1, T)                              # candidate-major, c minor
    best = np.argmin(flat, axis=0)
    s_idx = combos[best // n_c]
    c_idx = best % n_c
    return s_idx, c_idx


def detect_two_step_ml(block: ReceivedBlock, channel: FlatChannel,
                       source: Alphabet = QPSK, abd: Alphabet = BPSK) -> DetectionResult:
    """Low-complexity ML detector (K |A_c| |A_s| candidate evaluations)."""
    y, h1, h2, _ = _as_batch(block.y, channel.h1, channel.h2)
    for c in abd.symbols:
        if np.sum(np.abs(h1[0] + h2[0] * c) ** 2) <= _NORM_EPS:
            raise DegenerateChannelError(
                "equivalent channel vanishes for an A-BD candidate")
    s_idx, c_idx = two_step_ml_indices(y, h1, h2, source, abd)
    return _result(s_idx[0], c_idx[0], source, abd, "ml")


def detect_joint_ml(block: ReceivedBlock, channel: FlatChannel,
                    source: Alphabet = QPSK, abd: Alphabet = BPSK) -> DetectionResult:
    """Reference exhaustive ML detector (|A_c| |A_s|^K hypotheses)."""
    y, h1, h2, _ = _as_batch(block.y, channel.h1, channel.h2)
    s_idx, c_idx = joint_ml_indices(y, h1, h2, source, abd)
    return _result(s_idx[0], c_idx[0], source, abd, "joint-ml")


# ---------------------------------------------------------------------------
# linear detectors
# ---------------------------------------------------------------------------

def _decoder_rows(h1, h2, kind: str, sigma2: float, P_s: float):
    """Batched decoder rows (t0, t1), each (T, M); NaN rows mark degenerate draws."""
    n1 = np.sum(np.abs(h1) ** 2, axis=-1)
    n2 = np.sum(np.abs(h2) ** 2, axis=-1)
    if kind == "mrc":
        with np.errstate(divide="ignore", invalid="ignore"):
            t0 = np.conj(h1) / n1[..., None]
            t1 = np.conj(h2) / n2[..., None]
        return t0, t1
    g12 = np.einsum("...m,...m->...", np.conj(h1), h2)
    if kind == "zf":
        d0, d1 = n1, n2
    elif kind == "mmse":
        reg = sigma2 / P_s
        d0, d1 = n1 + reg, n2 + reg
    else:
        raise ConfigurationError(f"unknown linear detector kind: {kind}")
    det = d0 * d1 - np.abs(g12) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (d1[..., None] * np.conj(h1) - g12[..., None] * np.conj(h2)) / det[..., None]
        t1 = (d0[..., None] * np.conj(h2) - np.conj(g12)[..., None] * np.conj(h1)) / det[..., None]
    return t0, t1


def build_linear_decoder(channel: FlatChannel, kind: str, sigma2: float = 0.0,
                         P_s: float = 1.0) -> LinearDecoder:
    """MRC, ZF or MMSE decoding matrix for one channel realization.

    MRC normalizes each stream by its own channel; ZF inverts the 2 x 2 Gram
    matrix; MMSE regularizes the Gram matrix by sigma2 / P_s.
    """
    kind = kind.lower()
    h1 = np.asarray(channel.h1, dtype=np.complex128)
    h2 = np.asarray(channel.h2, dtype=np.complex128)
    n1 = np.sum(np.abs(h1) ** 2)
    n2 = np.sum(np.abs(h2) ** 2)
    if kind == "mrc" and (n1 <= _NORM_EPS or n2 <= _NORM_EPS):
        raise DegenerateChannelError("MRC requires non-zero h1 and h2")
    if kind == "zf":
        g12 = np.vdot(h1, h2)
        det = n1 * n2 - np.abs(g12) ** 2
        if det <= 1e-12 * max(n1 * n2, _NORM_EPS):
            raise DegenerateChannelError("H^H H is singular; ZF undefined")
    if kind == "mmse" and sigma2 <= 0:
        raise ConfigurationError("MMSE needs a positive noise variance")
    t0, t1 = _decoder_rows(h1[None], h2[None], kind, sigma2, P_s)
    return LinearDecoder(kind=kind, T=np.stack([t0[0], t1[0]], axis=0))


def linear_indices(y, h1, h2, kind: str, sigma2: float, P_s: float,
                   source: Alphabet = QPSK, abd: Alphabet = BPSK):
    """Batched linear detection: quantize stream 1, then match the ratio
    stream-2 / s_hat to the nearest A-BD symbol by summed absolute deviation."""
    t0, t1 = _decoder_rows(h1, h2, kind, sigma2, P_s)
    x1 = np.einsum("tm,tkm->tk", t0, y)
    x2 = np.einsum("tm,tkm->tk", t1, y)
    s_idx = quantize_indices(x1, source)
    ratio = x2 / source.symbols[s_idx]
    metrics = np.stack([np.sum(np.abs(c - ratio), axis=-1) for c in abd.symbols])
    c_idx = np.argmin(metrics, axis=0)
    return s_idx, c_idx


def detect_linear(block: ReceivedBlock, decoder: LinearDecoder,
                  source: Alphabet = QPSK, abd: Alphabet = BPSK) -> DetectionResult:
    """Apply a prepared linear decoder to one block."""
    y = block.y
    x = np.einsum("sm,km->ks", decoder.T, y)      # (K, 2)
    s_idx = quantize_indices(x[:, 0], source)
    ratio = x[:, 1] / source.symbols[s_idx]
    metrics = [np.sum(np.abs(c - ratio)) for c in abd.symbols]
    c_idx = int(np.argmin(metrics))
    return _result(s_idx, c_idx, source, abd, decoder.kind)


# ---------------------------------------------------------------------------
# successive interference cancellation
# ---------------------------------------------------------------------------

def sic_indices(y, h1, h2, first_stage: str, sigma2: float, P_s: float,
                source: Alphabet = QPSK, abd: Alphabet = BPSK):
    """Batched three-stage SIC.

    Stage 1 detects the source with the chosen linear front end; stage 2
    subtracts the reconstructed direct-link signal, combines on h2 and
    decides c; stage 3 re-quantizes the source against h1 + h2 c_hat.
    Returns the stage-3 source indices and the stage-2 c indices.
    """
    s1_idx, _ = linear_indices(y, h1, h2, first_stage, sigma2, P_s, source, abd)
    s1_sym = source.symbols[s1_idx]
    n2 = np.sum(np.abs(h2) ** 2, axis=-1)
    v = y - h1[:, None, :] * s1_sym[:, :, None]
    y2 = np.einsum("tm,tkm->tk", np.conj(h2), v) / n2[:, None]
    ratio = y2 / s1_sym
    metrics = np.stack([np.sum(np.abs(c - ratio), axis=-1) for c in abd.symbols])
    c_idx = np.argmin(metrics, axis=0)
    w = h1 + h2 * abd.symbols[c_idx][:, None]
    nw = np.sum(np.abs(w) ** 2, axis=-1)
    z = np.einsum("tm,tkm->tk", np.conj(w), y) / nw[:, None]
    s_idx = quantize_indices(z, source)
    return s_idx, c_idx


def detect_sic(block: ReceivedBlock, channel: FlatChannel, first_stage: str,
               sigma2: float, P_s: float = 1.0,
               source: Alphabet = QPSK, abd: Alphabet = BPSK) -> DetectionResult:
    """SIC detector for one block; ``first_stage`` is mrc, zf or mmse."""
    first_stage = first_stage.lower()
    if np.sum(np.abs(channel.h2) ** 2) <= _NORM_EPS:
        raise DegenerateChannelError("SIC needs a non-zero backscatter channel")
    build_linear_decoder(channel, first_stage, sigma2, P_s)   # surface stage-1 guards
    y, h1, h2, _ = _as_batch(block.y, channel.h1, channel.h2)
    s_idx, c_idx = sic_indices(y, h1, h2, first_stage, sigma2, P_s, source, abd)
    return _result(s_idx[0], c_idx[0], source, abd, f"{first_stage}-sic")


# ---------------------------------------------------------------------------
# direct-link baseline
# ---------------------------------------------------------------------------

def simo_indices(y, h1, source: Alphabet = QPSK):
    """Per-symbol MRC on the direct link only (no backscatter device)."""
    nh = np.sum(np.abs(h1) ** 2, axis=-1)
    z = np.einsum("tm,tkm->tk", np.conj(h1), y) / nh[:, None]
    return quantize_indices(z, source)
