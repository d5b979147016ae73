"""Hemodynamic response modeling and embedding-stream convolution.

The response kernel is a difference of two gamma densities: a positive peak
near 5 s and a scaled undershoot near 15 s. Event streams are rendered on an
oversampled grid, convolved with the kernel, and sampled back at TR
boundaries to produce one regressor column per embedding dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import gammaln

from .errors import ValidationError

# oversampled grid period must divide the TR this closely
_GRID_ALIGN_TOL = 1e-6


@dataclass(frozen=True)
class HrfParams:
    """Double-gamma kernel parameters, in seconds where dimensioned."""

    peak_shape: float = 6.0
    undershoot_shape: float = 16.0
    peak_scale_s: float = 1.0
    undershoot_scale_s: float = 1.0
    undershoot_ratio: float = 1.0 / 6.0
    length_s: float = 32.0
    oversample_hz: float = 50.0

    def __post_init__(self):
        if self.peak_shape <= 0 or self.undershoot_shape <= 0:
            raise ValidationError("gamma shape parameters must be positive")
        if self.peak_scale_s <= 0 or self.undershoot_scale_s <= 0:
            raise ValidationError("gamma scale parameters must be positive")
        if self.undershoot_ratio < 0:
            raise ValidationError("undershoot_ratio must be non-negative")
        if self.length_s <= 0:
            raise ValidationError("kernel length must be positive")
        if self.oversample_hz <= 0:
            raise ValidationError("oversample_hz must be positive")


def _gamma_pdf(t, shape, scale):
    # log-space keeps large shapes (undershoot_shape=16) stable
    out = np.zeros_like(t, dtype=np.float64)
    pos = t > 0
    tp = t[pos]
    log_pdf = (
        (shape - 1.0) * np.log(tp)
        - tp / scale
        - shape * np.log(scale)
        - gammaln(shape)
    )
    out[pos] = np.exp(log_pdf)
    return out


def sample_hrf(t, params=HrfParams()):
    """Evaluate the kernel at times `t` (seconds, non-negative)."""
    t = np.asarray(t, dtype=np.float64)
    if t.size and (t < 0).any():
        raise ValidationError("the response kernel is causal; t must be >= 0")
    peak = _gamma_pdf(t, params.peak_shape, params.peak_scale_s)
    under = _gamma_pdf(t, params.undershoot_shape, params.undershoot_scale_s)
    return peak - params.undershoot_ratio * under


def kernel_samples(params=HrfParams()):
    """The kernel on its own oversampled grid, t = 0 .. length_s inclusive."""
    n = int(np.floor(params.length_s * params.oversample_hz)) + 1
    t = np.arange(n) / params.oversample_hz
    return sample_hrf(t, params)


def _tr_stride(tr_s, params):
    stride = tr_s * params.oversample_hz
    rounded = round(stride)
    if rounded < 1 or abs(stride - rounded) > _GRID_ALIGN_TOL * max(1.0, stride):
        raise ValidationError(
            f"tr_s * oversample_hz = {stride} is not a whole number of grid "
            "steps; pick an oversample rate that divides the TR evenly"
        )
    return int(rounded)


def convolve_track(track, params, tr_s, n_trs, *, impulse=False):
    """Render a stimulus track into an (n_trs, dim) design matrix.

    Each event paints its vector onto an oversampled boxcar (or a single
    impulse slot scaled by 1/dt when `impulse` is set), the stream is
    convolved with the kernel, and rows are read off at TR starts.
    Returns (design, truncated_count) where the count is the number of
    events whose response runs past the end of the scan.
    """
    if n_trs < 1:
        raise ValidationError(f"n_trs must be >= 1, got {n_trs}")
    if tr_s <= 0:
        raise ValidationError(f"tr_s must be positive, got {tr_s}")
    stride = _tr_stride(tr_s, params)
    os_hz = params.oversample_hz
    dt = 1.0 / os_hz
    n_slots = (n_trs - 1) * stride + 1  # last TR sample included

    stream = np.zeros((n_slots, track.dim), dtype=np.float64)
    truncated = 0
    scan_end_s = n_trs * tr_s
    for onset, duration, vec in zip(track.onsets, track.durations, track.vectors):
        if onset + duration + params.length_s > scan_end_s:
            truncated += 1
        start = int(round(onset * os_hz))
        if start >= n_slots:
            continue
        if impulse:
            stream[start] += vec / dt
        else:
            end = max(start + 1, int(round((onset + duration) * os_hz)))
            stream[start:min(end, n_slots)] += vec

    kernel = kernel_samples(params)
    convolved = fftconvolve(stream, kernel[:, None], mode="full", axes=0) * dt
    design = convolved[: n_slots : stride][:n_trs]
    return np.ascontiguousarray(design), truncated


def zscore_columns(m, eps=0.0):
    """Standardize columns to zero mean, unit population std.

    Columns with zero variance come back as all zeros rather than NaN.
    """
    m = np.asarray(m, dtype=np.float64)
    mu = m.mean(axis=0)
    sd = m.std(axis=0)
    safe = np.where(sd > eps, sd, 1.0)
    out = (m - mu) / safe
    out[:, sd <= eps] = 0.0
    return out
