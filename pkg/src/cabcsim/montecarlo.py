"""Trial orchestration: seeded sweeps over parameter grids with early stopping.

Each grid point gets its own RNG stream derived by hashing the master seed
together with the point's parameter values, so results are independent of
grid order and of how points are scheduled across workers.  Within a point,
trials run in fixed-size vectorized chunks; one fresh channel is drawn per
trial, so the counters estimate the channel-averaged BER.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np

from . import analysis
from .channel import OfdmParams, SystemParams, draw_selective_channels, \
    sample_cscg, subcarrier_responses
from .errors import ConfigurationError
from .flat_detectors import joint_ml_indices, linear_indices, sic_indices, \
    simo_indices, two_step_ml_indices
from .modulation import BPSK, QPSK
from .ofdm import dft_demodulate_batch, ofdm_ml_indices, ofdm_modulate, \
    ofdm_simo_indices, simulate_reception_batch

FLAT_DETECTORS = ("joint-ml", "ml", "mrc", "zf", "mmse",
                  "mrc-sic", "zf-sic", "mmse-sic", "simo-baseline")
OFDM_DETECTORS = ("ofdm-ml", "simo-baseline")

CHUNK_TRIALS = 20_000
OFDM_CHUNK_TRIALS = 4_000   # sample-level arrays are ~40x larger per trial
ANALYTICAL_CHANNELS = 10_000


@dataclass(frozen=True)
class SweepSpec:
    """Full description of one sweep job."""

    scenario: str = "flat"
    detectors: tuple = ("ml",)
    gamma_d_db: tuple = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0)
    delta_gamma_db: tuple = (-10.0,)
    K: tuple = (1,)
    M: int = 4
    alpha: complex = 0.2 + 0.3j
    P_s: float = 1.0
    beta_f: float = 1e-7
    beta_v: float = 1e-5
    ofdm: OfdmParams = field(default_factory=OfdmParams)
    min_trials: int = 1_000
    max_trials: int = 100_000
    target_errors: int = 100
    seed: int = 12345
    analytical: bool = False
    analytical_channels: int = ANALYTICAL_CHANNELS

    def __post_init__(self):
        if self.scenario not in ("flat", "ofdm"):
            raise ConfigurationError(f"unknown scenario: {self.scenario}")
        if not self.detectors or not self.gamma_d_db \
                or not self.delta_gamma_db or not self.K:
            raise ConfigurationError("grids must be non-empty")
        if self.min_trials > self.max_trials:
            raise ConfigurationError("min_trials must not exceed max_trials")
        if self.target_errors < 1:
            raise ConfigurationError("target_errors must be at least 1")
        known = FLAT_DETECTORS if self.scenario == "flat" else OFDM_DETECTORS
        for det in self.detectors:
            if det not in known:
                raise ConfigurationError(
                    f"unknown detector for scenario {self.scenario}: {det}")


@dataclass(frozen=True)
class BerEstimate:
    """Error counters with 95% normal-approximation half-widths.

    Half-widths come from per-trial error-count moments, which stays honest
    when bits within a trial share a channel realization.
    """

    bit_errors_s: int
    bits_s: int
    bit_errors_c: int
    bits_c: int
    ber_s: float
    ber_c: float
    half_width_s: float
    half_width_c: float
    trials: int
    redraws: int = 0


@dataclass(frozen=True)
class PointResult:
    """One sweep row: the parameter point, its estimate, optional formula values."""

    scenario: str
    detector: str
    gamma_d_db: float
    delta_gamma_db: float
    K: int
    M: int
    ofdm: OfdmParams | None
    estimate: BerEstimate
    analytical_s: float | None
    analytical_c: float | None
    seed: int
    error: str | None = None


def point_seed(master_seed: int, scenario: str, detector: str,
               gamma_d_db: float, delta_gamma_db: float, K: int, M: int) -> int:
    """Stable per-point seed derived from parameter values, not grid position."""
    key = f"{master_seed}|{scenario}|{detector}|{gamma_d_db:.10g}|" \
          f"{delta_gamma_db:.10g}|{K}|{M}"
    digest = hashlib.blake2b(key.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


class _Counters:
    __slots__ = ("trials", "err_s", "err_c", "sum2_s", "sum2_c", "redraws")

    def __init__(self):
        self.trials = 0
        self.err_s = 0
        self.err_c = 0
        self.sum2_s = 0
        self.sum2_c = 0
        self.redraws = 0

    def update(self, e_s: np.ndarray, e_c: np.ndarray | None):
        self.trials += e_s.shape[0]
        self.err_s += int(e_s.sum())
        self.sum2_s += int((e_s.astype(np.int64) ** 2).sum())
        if e_c is not None:
            self.err_c += int(e_c.sum())
            self.sum2_c += int((e_c.astype(np.int64) ** 2).sum())

    def estimate(self, bits_per_trial_s: int, has_c: bool) -> BerEstimate:
        t = self.trials
        bits_s = t * bits_per_trial_s
        bits_c = t if has_c else 0

        def hw(err, sum2, per_trial):
            if t < 2:
                return float("inf")
            var = (sum2 - err ** 2 / t) / (t - 1)
            return 1.96 * np.sqrt(max(var, 0.0) / t) / per_trial

        ber_s = self.err_s / bits_s if bits_s else 0.0
        ber_c = self.err_c / bits_c if bits_c else float("nan")
        return BerEstimate(
            bit_errors_s=self.err_s, bits_s=bits_s,
            bit_errors_c=self.err_c if has_c else 0, bits_c=bits_c,
            ber_s=ber_s, ber_c=ber_c,
            half_width_s=hw(self.err_s, self.sum2_s, bits_per_trial_s),
            half_width_c=hw(self.err_c, self.sum2_c, 1) if has_c else float("nan"),
            trials=t, redraws=self.redraws,
        )


def _draw_valid_flat(params: SystemParams, rng, n, detector):
    """Channel draws with degenerate realizations redrawn (and counted)."""
    f = sample_cscg(rng, params.beta_f, (n, params.M))
    v = sample_cscg(rng, params.beta_v, (n, 1))
    g = sample_cscg(rng, params.beta_g, (n, params.M))
    root_ps = np.sqrt(params.P_s)
    h1 = root_ps * f
    h2 = root_ps * params.alpha * v * g
    redraws = 0
    for _ in range(100):
        bad = _degenerate_mask(h1, h2, params, detector)
        if not bad.any():
            break
        m = int(bad.sum())
        redraws += m
        h1[bad] = root_ps * sample_cscg(rng, params.beta_f, (m, params.M))
        v2 = sample_cscg(rng, params.beta_v, (m, 1))
        g2 = sample_cscg(rng, params.beta_g, (m, params.M))
        h2[bad] = root_ps * params.alpha * v2 * g2
    return h1, h2, redraws


def _degenerate_mask(h1, h2, params: SystemParams, detector: str):
    n1 = np.sum(np.abs(h1) ** 2, axis=-1)
    n2 = np.sum(np.abs(h2) ** 2, axis=-1)
    bad = n1 == 0
    if detector in ("mrc", "mrc-sic", "zf-sic", "mmse-sic"):
        bad |= n2 == 0
    if detector in ("zf", "zf-sic"):
        g12 = np.abs(np.einsum("tm,tm->t", np.conj(h1), h2)) ** 2
        bad |= (n1 * n2 - g12) <= 0
    return bad


def _flat_chunk(params: SystemParams, detector: str, rng, n: int):
    """Run ``n`` flat trials; returns per-trial error counts (e_s, e_c|None, redraws)."""
    K = params.K
    h1, h2, redraws = _draw_valid_flat(params, rng, n, detector)
    s_bits = rng.integers(0, 2, size=(n, K, 2))
    s = QPSK.modulate(s_bits)
    noise = sample_cscg(rng, params.sigma2, (n, K, params.M))
    if detector == "simo-baseline":
        y = h1[:, None, :] * s[:, :, None] + noise
        s_idx = simo_indices(y, h1)
        e_s = np.sum(QPSK.bits_of(s_idx) != s_bits, axis=(1, 2))
        return e_s, None, redraws
    c_bits = rng.integers(0, 2, size=n)
    c = BPSK.symbols[c_bits]
    y = (h1[:, None, :] * s[:, :, None]
         + h2[:, None, :] * (s * c[:, None])[:, :, None] + noise)
    if detector == "ml":
        s_idx, c_idx = two_step_ml_indices(y, h1, h2)
    elif detector == "joint-ml":
        s_idx, c_idx = joint_ml_indices(y, h1, h2)
    elif detector in ("mrc", "zf", "mmse"):
        s_idx, c_idx = linear_indices(y, h1, h2, detector, params.sigma2, params.P_s)
    elif detector in ("mrc-sic", "zf-sic", "mmse-sic"):
        s_idx, c_idx = sic_indices(y, h1, h2, detector.split("-")[0],
                                   params.sigma2, params.P_s)
    else:
        raise ConfigurationError(f"unknown detector: {detector}")
    e_s = np.sum(QPSK.bits_of(s_idx) != s_bits, axis=(1, 2))
    e_c = (c_idx != c_bits).astype(np.int64)
    return e_s, e_c, redraws


def _ofdm_chunk(params: SystemParams, ofdm: OfdmParams, detector: str, rng,
                n: int, want_coeffs: bool):
    """Run ``n`` OFDM trials through the sample-level chain.

    Returns (e_s, e_c|None, redraws, coeff sums) where the coefficient sums
    accumulate the subcarrier-averaged conditional source-BER terms used for
    the analytical overlay.
    """
    N = ofdm.N
    f, v, g = draw_selective_channels(params, ofdm, rng, n)
    bits_prev = rng.integers(0, 2, size=(n, N, 2))
    s_bits = rng.integers(0, 2, size=(n, N, 2))
    s_prev = QPSK.modulate(bits_prev)
    s_cur = QPSK.modulate(s_bits)
    stream = np.concatenate([ofdm_modulate(s_prev, ofdm),
                             ofdm_modulate(s_cur, ofdm)], axis=-1)
    if detector == "simo-baseline":
        c_prev = np.ones(n)
        c_cur = np.ones(n)
        g_used = np.zeros_like(g)
    else:
        c_prev = BPSK.symbols[rng.integers(0, 2, size=n)]
        c_bits = rng.integers(0, 2, size=n)
        c_cur = BPSK.symbols[c_bits]
        g_used = g
    y = simulate_reception_batch(stream, c_prev, c_cur, f, v, g_used,
                                 params, ofdm, rng)
    z = dft_demodulate_batch(y, ofdm)
    h_d, h_b = subcarrier_responses(f, v, g, params, ofdm)
    coeffs = None
    if detector == "simo-baseline":
        s_idx = ofdm_simo_indices(z, h_d)
        e_s = np.sum(QPSK.bits_of(s_idx) != s_bits, axis=(1, 2))
        if want_coeffs:
            a1 = analysis.q_function(
                np.sqrt(np.sum(np.abs(h_d) ** 2, axis=-1)) / params.sigma)
            coeffs = (float(a1.mean(axis=-1).sum()), 0.0)
        return e_s, None, 0, coeffs
    if detector != "ofdm-ml":
        raise ConfigurationError(f"unknown detector: {detector}")
    s_idx, c_idx = ofdm_ml_indices(z, h_d, h_b)
    e_s = np.sum(QPSK.bits_of(s_idx) != s_bits, axis=(1, 2))
    e_c = (c_idx != c_bits).astype(np.int64)
    if want_coeffs:
        a1, a2 = analysis.ofdm_ml_coefficients(h_d, h_b, params.sigma)
        coeffs = (float(a1.sum()), float(a2.sum()))
    return e_s, e_c, 0, coeffs


def run_point(spec: SweepSpec, detector: str, gamma_d_db: float,
              delta_gamma_db: float, K: int) -> PointResult:
    """Simulate one grid point with its own derived RNG stream."""
    seed = point_seed(spec.seed, spec.scenario, detector, gamma_d_db,
                      delta_gamma_db, K, spec.M)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    params = SystemParams.create(
        M=spec.M, K=K, alpha=spec.alpha, P_s=spec.P_s, beta_f=spec.beta_f,
        beta_v=spec.beta_v, gamma_d_db=gamma_d_db, delta_gamma_db=delta_gamma_db)
    has_c = detector != "simo-baseline"
    bits_per_trial = 2 * (spec.ofdm.N if spec.scenario == "ofdm" else K)
    counters = _Counters()
    coeff_sums = np.zeros(2)
    chunk = CHUNK_TRIALS if spec.scenario == "flat" else OFDM_CHUNK_TRIALS
    while counters.trials < spec.max_trials:
        n = min(chunk, spec.max_trials - counters.trials)
        if spec.scenario == "flat":
            e_s, e_c, redraws = _flat_chunk(params, detector, rng, n)
        else:
            e_s, e_c, redraws, coeffs = _ofdm_chunk(
                params, spec.ofdm, detector, rng, n, spec.analytical)
            if coeffs is not None:
                coeff_sums += coeffs
        counters.update(e_s, e_c)
        counters.redraws += redraws
        if counters.trials >= spec.min_trials \
                and counters.err_s >= spec.target_errors \
                and (not has_c or counters.err_c >= spec.target_errors):
            break
    est = counters.estimate(bits_per_trial, has_c)

    analytical_s = analytical_c = None
    if spec.analytical:
        analytical_s, analytical_c = _analytical_point(
            spec, detector, params, seed, est, coeff_sums)
    return PointResult(
        scenario=spec.scenario, detector=detector, gamma_d_db=gamma_d_db,
        delta_gamma_db=delta_gamma_db, K=K, M=spec.M,
        ofdm=spec.ofdm if spec.scenario == "ofdm" else None,
        estimate=est, analytical_s=analytical_s, analytical_c=analytical_c,
        seed=seed)


def _analytical_point(spec, detector, params, seed, est, coeff_sums):
    """Channel-averaged formula values for the overlay columns."""
    if spec.scenario == "flat":
        name = "ml" if detector == "joint-ml" else detector
        if params.K != 1 or name not in analysis.FLAT_FORMULAS:
            return None, None
        rng = np.random.default_rng(np.random.SeedSequence(seed ^ 0xA11A))
        avg = analysis.average_ber(name, params, spec.analytical_channels, rng)
        pec = None if np.isnan(avg.pe_c) else avg.pe_c
        return avg.pe_s, pec
    if est.trials == 0:
        return None, None
    a1, a2 = coeff_sums / est.trials
    if detector == "simo-baseline":
        return float(a1), None
    return float((1.0 - est.ber_c) * a1 + est.ber_c * a2), None


def _points(spec: SweepSpec):
    for detector in spec.detectors:
        for gamma in spec.gamma_d_db:
            for delta in spec.delta_gamma_db:
                for k in spec.K:
                    yield detector, float(gamma), float(delta), int(k)


def _run_point_task(args):
    spec, point = args
    detector, gamma, delta, k = point
    try:
        return run_point(spec, detector, gamma, delta, k)
    except Exception as exc:  # keep the sweep going; row records the failure
        return PointResult(
            scenario=spec.scenario, detector=detector, gamma_d_db=gamma,
            delta_gamma_db=delta, K=k, M=spec.M,
            ofdm=spec.ofdm if spec.scenario == "ofdm" else None,
            estimate=BerEstimate(0, 0, 0, 0, float("nan"), float("nan"),
                                 float("nan"), float("nan"), 0),
            analytical_s=None, analytical_c=None,
            seed=point_seed(spec.seed, spec.scenario, detector, gamma, delta,
                            k, spec.M),
            error=f"{type(exc).__name__}: {exc}")


def run_sweep(spec: SweepSpec, workers: int = 1) -> list[PointResult]:
    """Run every grid point; row order follows the grid definition and the
    numbers are identical for any worker count."""
    tasks = [(spec, p) for p in _points(spec)]
    if workers <= 1 or len(tasks) <= 1:
        return [_run_point_task(t) for t in tasks]
    with get_context("fork").Pool(processes=min(workers, len(tasks))) as pool:
        return pool.map(_run_point_task, tasks)
