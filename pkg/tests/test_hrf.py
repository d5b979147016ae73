"""Kernel shape checks and a slot-by-slot convolution oracle."""

import numpy as np
import pytest

from voxelenc import StimulusTrack, ValidationError
from voxelenc.hrf import (
    HrfParams,
    convolve_track,
    kernel_samples,
    sample_hrf,
    zscore_columns,
)


def oracle_convolve(track, params, tr_s, n_trs, impulse=False):
    """Direct summation over event slots, no FFT involved."""
    os_hz = params.oversample_hz
    dt = 1.0 / os_hz
    stride = int(round(tr_s * os_hz))
    n_slots = (n_trs - 1) * stride + 1
    kernel = kernel_samples(params)
    design = np.zeros((n_trs, track.dim))
    for onset, duration, vec in zip(track.onsets, track.durations, track.vectors):
        start = int(round(onset * os_hz))
        if start >= n_slots:
            continue
        if impulse:
            slots = [(start, vec / dt)]
        else:
            end = max(start + 1, int(round((onset + duration) * os_hz)))
            slots = [(s, vec) for s in range(start, min(end, n_slots))]
        for s, v in slots:
            for k in range(n_trs):
                lag = k * stride - s
                if 0 <= lag < kernel.shape[0]:
                    design[k] += v * kernel[lag] * dt
    return design


def random_track(rng, n_events, dim, t_max):
    onsets = np.sort(rng.uniform(0, t_max, n_events))
    return StimulusTrack(
        onsets=onsets,
        durations=rng.uniform(0.1, 4.0, n_events),
        vectors=rng.standard_normal((n_events, dim)),
    )


class TestKernelShape:
    def test_peak_lands_near_five_seconds(self):
        t = np.arange(0, 32, 0.001)
        h = sample_hrf(t)
        assert 4.5 <= t[np.argmax(h)] <= 5.5

    def test_undershoot_is_negative_in_window(self):
        t = np.arange(0, 32, 0.001)
        h = sample_hrf(t)
        i = np.argmin(h)
        assert 10.0 <= t[i] <= 20.0
        assert h[i] < 0

    def test_zero_at_origin(self):
        assert sample_hrf(np.array([0.0]))[0] == 0.0

    def test_negative_time_rejected(self):
        with pytest.raises(ValidationError):
            sample_hrf(np.array([-0.5]))

    def test_no_undershoot_when_ratio_zero(self):
        p = HrfParams(undershoot_ratio=0.0)
        h = sample_hrf(np.arange(0, 32, 0.01), p)
        assert (h >= 0).all()

    def test_param_validation(self):
        for bad in (
            dict(peak_shape=0),
            dict(undershoot_shape=-1),
            dict(peak_scale_s=0),
            dict(undershoot_ratio=-0.1),
            dict(length_s=0),
            dict(oversample_hz=0),
        ):
            with pytest.raises(ValidationError):
                HrfParams(**bad)

    def test_kernel_samples_grid(self):
        p = HrfParams(length_s=10.0, oversample_hz=10.0)
        k = kernel_samples(p)
        assert k.shape == (101,)


class TestConvolution:
    def test_matches_direct_summation(self):
        rng = np.random.default_rng(123)
        params = HrfParams(oversample_hz=20.0, length_s=20.0)
        for _ in range(10):
            n_trs = int(rng.integers(20, 50))
            tr_s = float(rng.choice([1.0, 1.5, 2.0]))
            track = random_track(rng, int(rng.integers(1, 12)), 3, n_trs * tr_s)
            got, _ = convolve_track(track, params, tr_s, n_trs)
            want = oracle_convolve(track, params, tr_s, n_trs)
            assert np.max(np.abs(got - want)) < 1e-9

    def test_impulse_mode_matches_oracle(self):
        rng = np.random.default_rng(7)
        params = HrfParams(oversample_hz=10.0, length_s=20.0)
        track = random_track(rng, 6, 2, 40.0)
        got, _ = convolve_track(track, params, 2.0, 25, impulse=True)
        want = oracle_convolve(track, params, 2.0, 25, impulse=True)
        assert np.max(np.abs(got - want)) < 1e-9

    def test_single_impulse_reproduces_kernel(self):
        # one unit impulse at t=0 samples the kernel at TR spacing
        params = HrfParams()
        track = StimulusTrack(onsets=[0.0], durations=[0.0], vectors=[[1.0]])
        design, _ = convolve_track(track, params, 2.0, 12, impulse=True)
        want = sample_hrf(np.arange(12) * 2.0, params)
        np.testing.assert_allclose(design[:, 0], want, atol=1e-9)

    def test_linearity_in_vectors(self):
        rng = np.random.default_rng(5)
        params = HrfParams(oversample_hz=10.0)
        base = random_track(rng, 8, 4, 50.0)
        other = StimulusTrack(
            onsets=base.onsets,
            durations=base.durations,
            vectors=rng.standard_normal(base.vectors.shape),
        )
        mixed = StimulusTrack(
            onsets=base.onsets,
            durations=base.durations,
            vectors=2.5 * base.vectors - other.vectors,
        )
        d_base, _ = convolve_track(base, params, 2.0, 40)
        d_other, _ = convolve_track(other, params, 2.0, 40)
        d_mixed, _ = convolve_track(mixed, params, 2.0, 40)
        np.testing.assert_allclose(d_mixed, 2.5 * d_base - d_other, atol=1e-9)

    def test_shift_by_one_tr_shifts_rows(self):
        params = HrfParams()
        tr = 2.0
        a = StimulusTrack(onsets=[4.0], durations=[1.0], vectors=[[1.0]])
        b = StimulusTrack(onsets=[4.0 + tr], durations=[1.0], vectors=[[1.0]])
        da, _ = convolve_track(a, params, tr, 40)
        db, _ = convolve_track(b, params, tr, 40)
        np.testing.assert_allclose(db[1:], da[:-1], atol=1e-9)
        np.testing.assert_allclose(db[0], 0.0, atol=1e-12)

    def test_grid_misalignment_rejected(self):
        track = StimulusTrack(onsets=[0.0], durations=[1.0], vectors=[[1.0]])
        with pytest.raises(ValidationError, match="grid"):
            convolve_track(track, HrfParams(oversample_hz=3.3), 1.0, 10)

    def test_truncation_count(self):
        params = HrfParams(length_s=32.0)
        tr, n_trs = 2.0, 30  # scan covers 60 s
        track = StimulusTrack(
            onsets=[0.0, 20.0, 40.0],
            durations=[1.0, 1.0, 1.0],
            vectors=np.ones((3, 1)),
        )
        # responses end at 33, 53, 73 s; only the last runs past 60 s
        _, truncated = convolve_track(track, params, tr, n_trs)
        assert truncated == 1

    def test_event_after_scan_contributes_nothing(self):
        params = HrfParams()
        track = StimulusTrack(onsets=[500.0], durations=[1.0], vectors=[[3.0]])
        design, truncated = convolve_track(track, params, 2.0, 10)
        assert truncated == 1
        assert np.all(design == 0.0)

    def test_bad_scan_args(self):
        track = StimulusTrack(onsets=[0.0], durations=[1.0], vectors=[[1.0]])
        with pytest.raises(ValidationError):
            convolve_track(track, HrfParams(), 2.0, 0)
        with pytest.raises(ValidationError):
            convolve_track(track, HrfParams(), 0.0, 10)


class TestZscore:
    def test_standardizes(self):
        rng = np.random.default_rng(2)
        m = rng.normal(5.0, 3.0, (200, 4))
        z = zscore_columns(m)
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-12)

    def test_constant_column_becomes_zero(self):
        m = np.ones((50, 2))
        m[:, 1] = np.arange(50)
        z = zscore_columns(m)
        assert np.all(z[:, 0] == 0.0)
        np.testing.assert_allclose(z[:, 1].std(), 1.0)
