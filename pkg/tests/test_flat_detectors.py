"""Tests for the flat-fading receivers, including brute-force oracles."""

import itertools

import numpy as np
import pytest

from cabcsim.channel import FlatChannel, SystemParams, draw_flat_channel, \
    draw_flat_channels, sample_cscg
from cabcsim.errors import ConfigurationError, DegenerateChannelError
from cabcsim.flat_detectors import (ReceivedBlock, build_linear_decoder,
                                    detect_joint_ml, detect_linear, detect_sic,
                                    detect_two_step_ml, joint_ml_indices,
                                    linear_indices, sic_indices,
                                    two_step_ml_indices)
from cabcsim.modulation import BPSK, QPSK, random_frame


def params(**kw):
    kw.setdefault("gamma_d_db", 10.0)
    kw.setdefault("delta_gamma_db", -10.0)
    return SystemParams.create(**kw)


def synthesize(frame, channel, sigma, rng):
    noise = sample_cscg(rng, sigma ** 2, (frame.K, channel.M))
    y = (channel.h1[None, :] * frame.s[:, None]
         + channel.h2[None, :] * (frame.s * frame.c)[:, None] + noise)
    return ReceivedBlock(y=y)


def reference_joint_ml(y, h1, h2):
    """Independent re-implementation: plain double loop over all hypotheses."""
    K = y.shape[0]
    best = None
    for s_combo in itertools.product(range(4), repeat=K):
        s = QPSK.symbols[list(s_combo)]
        for ci, c in enumerate(BPSK.symbols):
            cost = 0.0
            for k in range(K):
                cost += np.sum(np.abs(y[k] - h1 * s[k] - h2 * s[k] * c) ** 2)
            cand = (cost, s_combo, ci)
            if best is None or cand[0] < best[0]:
                best = cand
    return np.array(best[1]), best[2]


class TestMl:
    def test_noiseless_exact_recovery(self):
        rng = np.random.default_rng(0)
        p = params(K=4)
        ch = draw_flat_channel(p, rng)
        fr = random_frame(rng, K=4)
        block = synthesize(fr, ch, 0.0, rng)
        for detect in (detect_two_step_ml, detect_joint_ml):
            res = detect(block, ch)
            np.testing.assert_allclose(res.s_hat, fr.s)
            assert res.c_hat == fr.c

    def test_two_step_equals_joint_noisy(self):
        rng = np.random.default_rng(1)
        for K in (1, 2, 3):
            p = params(K=K)
            n = 400
            ch = draw_flat_channels(p, rng, n)
            s_bits = rng.integers(0, 2, (n, K, 2))
            c_bits = rng.integers(0, 2, n)
            s = QPSK.modulate(s_bits)
            c = BPSK.symbols[c_bits]
            y = (ch.h1[:, None, :] * s[..., None]
                 + ch.h2[:, None, :] * (s * c[:, None])[..., None]
                 + sample_cscg(rng, p.sigma2, (n, K, p.M)))
            s_a, c_a = two_step_ml_indices(y, ch.h1, ch.h2)
            s_b, c_b = joint_ml_indices(y, ch.h1, ch.h2)
            np.testing.assert_array_equal(s_a, s_b)
            np.testing.assert_array_equal(c_a, c_b)

    def test_joint_ml_matches_double_loop_oracle(self):
        rng = np.random.default_rng(2)
        p = params(K=2)
        for _ in range(60):
            ch = draw_flat_channel(p, rng)
            fr = random_frame(rng, K=2)
            block = synthesize(fr, ch, p.sigma, rng)
            s_ref, c_ref = reference_joint_ml(block.y, ch.h1, ch.h2)
            s_idx, c_idx = joint_ml_indices(block.y[None], ch.h1[None],
                                            ch.h2[None])
            np.testing.assert_array_equal(s_idx[0], s_ref)
            assert c_idx[0] == c_ref

    def test_zero_backscatter_reduces_to_mrc(self):
        rng = np.random.default_rng(3)
        p = params(K=2)
        ch0 = draw_flat_channel(p, rng)
        ch = FlatChannel(h1=ch0.h1, h2=np.zeros_like(ch0.h2))
        fr = random_frame(rng, K=2)
        block = synthesize(fr, ch, p.sigma, rng)
        res = detect_joint_ml(block, ch)
        z = block.y @ np.conj(ch.h1) / np.sum(np.abs(ch.h1) ** 2)
        mrc = [min(QPSK.symbols, key=lambda s, zz=zz: abs(zz - s) ** 2)
               for zz in z]
        np.testing.assert_allclose(res.s_hat, mrc)
        assert res.c_hat == BPSK.symbols[0]  # deterministic tie rule

    def test_search_space_guard(self):
        y = np.zeros((1, 11, 4), dtype=complex)
        h = np.ones((1, 4), dtype=complex)
        with pytest.raises(ConfigurationError):
            joint_ml_indices(y, h, h)

    def test_degenerate_equivalent_channel(self):
        p = params()
        h1 = np.array([1.0 + 0j, 0, 0, 0])
        ch = FlatChannel(h1=h1, h2=h1.copy())  # h1 - h2 = 0 for c = -1
        block = ReceivedBlock(y=np.ones((1, 4), dtype=complex))
        with pytest.raises(DegenerateChannelError):
            detect_two_step_ml(block, ch)


class TestLinear:
    def test_zf_inverts_channel(self):
        rng = np.random.default_rng(4)
        ch = draw_flat_channel(params(), rng)
        dec = build_linear_decoder(ch, "zf")
        np.testing.assert_allclose(dec.T @ ch.H, np.eye(2), atol=1e-9)

    def test_orthonormal_columns(self):
        ch = FlatChannel(h1=np.array([1, 0, 0, 0], dtype=complex),
                         h2=np.array([0, 1, 0, 0], dtype=complex))
        dec = build_linear_decoder(ch, "zf")
        np.testing.assert_allclose(dec.T, ch.H.conj().T, atol=1e-12)

    def test_mmse_limits_to_zf(self):
        ch = draw_flat_channel(params(), np.random.default_rng(5))
        zf = build_linear_decoder(ch, "zf")
        mmse = build_linear_decoder(ch, "mmse", sigma2=1e-12 * np.sum(np.abs(ch.h1) ** 2))
        np.testing.assert_allclose(mmse.T, zf.T, rtol=1e-6, atol=1e-6 * np.abs(zf.T).max())

    def test_mrc_normalization(self):
        ch = draw_flat_channel(params(), np.random.default_rng(6))
        dec = build_linear_decoder(ch, "mrc")
        assert dec.T[0] @ ch.h1 == pytest.approx(1.0 + 0j)
        assert dec.T[1] @ ch.h2 == pytest.approx(1.0 + 0j)

    def test_singular_channel_rejected(self):
        h1 = np.array([1.0 + 0j, 1.0 + 0j])
        ch = FlatChannel(h1=h1, h2=2.0 * h1)
        with pytest.raises(DegenerateChannelError):
            build_linear_decoder(ch, "zf")

    def test_noiseless_zf_exact(self):
        rng = np.random.default_rng(7)
        p = params(K=3)
        ch = draw_flat_channel(p, rng)
        fr = random_frame(rng, K=3)
        block = synthesize(fr, ch, 0.0, rng)
        res = detect_linear(block, build_linear_decoder(ch, "zf"))
        np.testing.assert_allclose(res.s_hat, fr.s)
        assert res.c_hat == fr.c

    def test_noiseless_mrc_orthogonal_channels_exact(self):
        rng = np.random.default_rng(8)
        ch = FlatChannel(h1=np.array([1.0, 1.0, 0, 0], dtype=complex),
                         h2=np.array([0, 0, 0.5j, -0.25], dtype=complex))
        fr = random_frame(rng, K=2)
        block = synthesize(fr, ch, 0.0, rng)
        res = detect_linear(block, build_linear_decoder(ch, "mrc"))
        np.testing.assert_allclose(res.s_hat, fr.s)
        assert res.c_hat == fr.c

    def test_batched_matches_single(self):
        rng = np.random.default_rng(9)
        p = params()
        n = 64
        ch = draw_flat_channels(p, rng, n)
        s_bits = rng.integers(0, 2, (n, 2, 2))
        c_bits = rng.integers(0, 2, n)
        s = QPSK.modulate(s_bits)
        c = BPSK.symbols[c_bits]
        y = (ch.h1[:, None, :] * s[..., None]
             + ch.h2[:, None, :] * (s * c[:, None])[..., None]
             + sample_cscg(rng, p.sigma2, (n, 2, p.M)))
        for kind in ("mrc", "zf", "mmse"):
            s_idx, c_idx = linear_indices(y, ch.h1, ch.h2, kind, p.sigma2, p.P_s)
            for t in range(0, n, 7):
                single = FlatChannel(h1=ch.h1[t], h2=ch.h2[t])
                dec = build_linear_decoder(single, kind, p.sigma2, p.P_s)
                res = detect_linear(ReceivedBlock(y=y[t]), dec)
                np.testing.assert_allclose(res.s_hat, QPSK.symbols[s_idx[t]])
                assert res.c_hat == BPSK.symbols[c_idx[t]]


class TestSic:
    def test_noiseless_exact(self):
        rng = np.random.default_rng(10)
        p = params(K=2)
        ch = draw_flat_channel(p, rng)
        fr = random_frame(rng, K=2)
        block = synthesize(fr, ch, 0.0, rng)
        for stage in ("mrc", "zf", "mmse"):
            res = detect_sic(block, ch, stage, p.sigma2)
            np.testing.assert_allclose(res.s_hat, fr.s)
            assert res.c_hat == fr.c
            assert res.detector_id == f"{stage}-sic"

    def test_stage2_statistic_equals_c_noiseless(self):
        # with correct stage-1 decisions and no noise the combined statistic
        # after cancellation is exactly c
        rng = np.random.default_rng(11)
        p = params()
        ch = draw_flat_channel(p, rng)
        fr = random_frame(rng, K=1)
        y = synthesize(fr, ch, 0.0, rng).y
        v = y[0] - ch.h1 * fr.s[0]
        stat = np.conj(ch.h2) @ v / np.sum(np.abs(ch.h2) ** 2) / fr.s[0]
        assert stat == pytest.approx(fr.c, abs=1e-12)

    def test_zero_backscatter_rejected(self):
        p = params()
        ch = FlatChannel(h1=np.ones(4, dtype=complex), h2=np.zeros(4, dtype=complex))
        block = ReceivedBlock(y=np.ones((1, 4), dtype=complex))
        with pytest.raises(DegenerateChannelError):
            detect_sic(block, ch, "mmse", p.sigma2)


class TestProperties:
    def test_phase_covariance(self):
        rng = np.random.default_rng(12)
        p = params(K=2)
        n = 128
        ch = draw_flat_channels(p, rng, n)
        s = QPSK.modulate(rng.integers(0, 2, (n, 2, 2)))
        c = BPSK.symbols[rng.integers(0, 2, n)]
        y = (ch.h1[:, None, :] * s[..., None]
             + ch.h2[:, None, :] * (s * c[:, None])[..., None]
             + sample_cscg(rng, p.sigma2, (n, 2, p.M)))
        phase = np.exp(1j * rng.uniform(0, 2 * np.pi, (n, 1)))
        h1r, h2r = ch.h1 * phase, ch.h2 * phase
        yr = y * phase[:, :, None]
        for run in (
            lambda yy, a, b: two_step_ml_indices(yy, a, b),
            lambda yy, a, b: linear_indices(yy, a, b, "mmse", p.sigma2, p.P_s),
            lambda yy, a, b: sic_indices(yy, a, b, "zf", p.sigma2, p.P_s),
        ):
            s0, c0 = run(y, ch.h1, ch.h2)
            s1, c1 = run(yr, h1r, h2r)
            np.testing.assert_array_equal(s0, s1)
            np.testing.assert_array_equal(c0, c1)

    def test_received_block_validation(self):
        with pytest.raises(ValueError):
            ReceivedBlock(y=np.array([np.nan + 0j])[None, :])
        with pytest.raises(ValueError):
            ReceivedBlock(y=np.zeros(4, dtype=complex))
