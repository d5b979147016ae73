"""Synthetic multi-subject datasets with planted ground truth.

The generative model is X = convolve(track) @ W* + sigma * noise per subject,
with noise columns empirically normalized to unit std so the per-voxel SNR
is exact by construction, not just in expectation. Every stream derives from
the master seed through a stable hash, so subjects are independent yet the
whole dataset is reproducible, and an effect can be re-planted onto the same
noise realizations.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .hrf import HrfParams, convolve_track
from .matrixio import BoldRun, RoiAtlas, StimulusTrack

NETWORK_NAMES = ("language", "default_mode", "visual", "dorsal_attention")


def derived_rng(seed, tag):
    """Independent generator for one named stream of a master seed."""
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return np.random.default_rng(
        np.random.SeedSequence(int.from_bytes(digest, "little"))
    )


@dataclass(frozen=True)
class SynthSpec:
    """Knobs for one synthetic dataset; snr may be scalar or one per network."""

    n_subjects: int = 12
    n_voxels: int = 100
    n_trs: int = 200
    tr_s: float = 2.0
    dim: int = 8
    snr: object = 1.0
    noise: str = "white"
    ar1_rho: float = 0.5
    seed: int = 0
    n_events: int = None
    hrf: HrfParams = field(default_factory=HrfParams)

    def __post_init__(self):
        if min(self.n_subjects, self.n_voxels, self.n_trs, self.dim) < 1:
            raise ValidationError("all counts must be >= 1")
        if self.tr_s <= 0:
            raise ValidationError(f"tr_s must be positive, got {self.tr_s}")
        if self.noise not in ("white", "ar1"):
            raise ValidationError(f"noise must be white or ar1, got {self.noise!r}")
        if not -1.0 < self.ar1_rho < 1.0:
            raise ValidationError(f"ar1_rho must lie in (-1, 1), got {self.ar1_rho}")
        snr = self.snr
        values = snr if isinstance(snr, (tuple, list)) else (snr,)
        if isinstance(snr, (tuple, list)) and len(snr) != len(NETWORK_NAMES):
            raise ValidationError(
                f"per-network snr needs {len(NETWORK_NAMES)} values, got {len(snr)}"
            )
        for v in values:
            if np.isnan(v) or v < 0:
                raise ValidationError(f"snr must be >= 0 (inf allowed), got {v}")
        if self.n_events is not None and self.n_events < 1:
            raise ValidationError("n_events must be >= 1 when given")

    def subject_ids(self):
        return [f"sub-{i:02d}" for i in range(self.n_subjects)]


@dataclass(frozen=True)
class SynthDataset:
    """One generated dataset plus everything needed to audit or re-plant it."""

    spec: SynthSpec
    track: StimulusTrack
    design: np.ndarray  # raw convolved design, (n_trs, dim)
    true_weights: np.ndarray  # (dim, n_voxels), unit-norm columns
    signal: np.ndarray  # design @ true_weights
    atlas: RoiAtlas
    snr_per_voxel: np.ndarray
    bold: list  # BoldRun per subject


def make_atlas(n_voxels):
    """Four near-equal contiguous networks covering all voxels."""
    blocks = np.array_split(np.arange(n_voxels), len(NETWORK_NAMES))
    labels = np.empty(n_voxels, dtype=np.int64)
    for code, block in enumerate(blocks):
        labels[block] = code
    return RoiAtlas(labels=labels,
                    names={i: n for i, n in enumerate(NETWORK_NAMES)})


def _snr_vector(spec, atlas):
    if isinstance(spec.snr, (tuple, list)):
        per_net = np.asarray(spec.snr, dtype=np.float64)
        return per_net[atlas.labels]
    return np.full(spec.n_voxels, float(spec.snr))


def _make_track(spec):
    rng = derived_rng(spec.seed, "track")
    n_events = spec.n_events or max(4, spec.n_trs // 4)
    scan_s = spec.n_trs * spec.tr_s
    horizon = max(spec.tr_s, scan_s - spec.hrf.length_s - 2.0)
    onsets = np.sort(rng.uniform(0.0, horizon, n_events))
    durations = rng.uniform(1.0, 3.0, n_events)
    vectors = rng.standard_normal((n_events, spec.dim))
    return StimulusTrack(onsets=onsets, durations=durations, vectors=vectors,
                         run_id=f"synth-{spec.seed}")


def _noise_block(spec, subject_id):
    """Unit-std noise columns for one subject, white or AR1."""
    rng = derived_rng(spec.seed, f"noise:{subject_id}")
    e = rng.standard_normal((spec.n_trs, spec.n_voxels))
    if spec.noise == "ar1":
        rho = spec.ar1_rho
        x = np.empty_like(e)
        x[0] = e[0]
        scale = np.sqrt(1.0 - rho * rho)
        for t in range(1, spec.n_trs):
            x[t] = rho * x[t - 1] + scale * e[t]
        e = x
    e = e - e.mean(axis=0)
    sd = e.std(axis=0)
    sd[sd == 0] = 1.0
    return e / sd


def _assemble_bold(spec, signal, snr_vec):
    """Mix signal and per-subject noise at exact per-voxel SNR."""
    sig_sd = signal.std(axis=0)
    finite = np.isfinite(snr_vec) & (snr_vec > 0)
    sigma = np.zeros_like(snr_vec)
    sigma[finite] = sig_sd[finite] / np.sqrt(snr_vec[finite])
    pure_noise = snr_vec == 0
    runs = []
    for subject_id in spec.subject_ids():
        noise = _noise_block(spec, subject_id)
        x = signal + sigma * noise
        if pure_noise.any():
            x[:, pure_noise] = noise[:, pure_noise]
        runs.append(BoldRun(signal=x, tr_s=spec.tr_s, subject_id=subject_id,
                            run_id="run-0"))
    return runs


def draw_weights(dim, n_voxels, seed):
    """Unit-norm ground-truth weight columns from the 'weights' stream."""
    rng = derived_rng(seed, "weights")
    W = rng.standard_normal((dim, n_voxels))
    norms = np.linalg.norm(W, axis=0)
    norms[norms == 0] = 1.0
    return W / norms


def bold_from_signal(spec, signal):
    """Per-subject BOLD around an externally supplied clean signal.

    Returns (runs, atlas, snr_per_voxel). The signal must be
    (spec.n_trs, spec.n_voxels); noise streams and SNR policy match
    generate() exactly.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape != (spec.n_trs, spec.n_voxels):
        raise ValidationError(
            f"signal shape {signal.shape} does not match spec "
            f"({spec.n_trs}, {spec.n_voxels})"
        )
    atlas = make_atlas(spec.n_voxels)
    snr_vec = _snr_vector(spec, atlas)
    return _assemble_bold(spec, signal, snr_vec), atlas, snr_vec


def generate(spec):
    """Build the full dataset: shared track and weights, per-subject noise."""
    track = _make_track(spec)
    design, _ = convolve_track(track, spec.hrf, spec.tr_s, spec.n_trs)
    W = draw_weights(spec.dim, spec.n_voxels, spec.seed)
    signal = design @ W
    atlas = make_atlas(spec.n_voxels)
    snr_vec = _snr_vector(spec, atlas)
    return SynthDataset(
        spec=spec,
        track=track,
        design=design,
        true_weights=W,
        signal=signal,
        atlas=atlas,
        snr_per_voxel=snr_vec,
        bold=_assemble_bold(spec, signal, snr_vec),
    )


def expected_r(snr):
    """Correlation a perfect model attains at a given SNR: sqrt(snr/(1+snr))."""
    snr = np.asarray(snr, dtype=np.float64)
    out = np.ones_like(snr)
    finite = np.isfinite(snr)
    out[finite] = np.sqrt(snr[finite] / (1.0 + snr[finite]))
    return out


def plant_effect(dataset, delta, voxel_set):
    """Copy the dataset with SNR raised at `voxel_set` so expected r gains
    ~delta, reusing the identical noise realizations everywhere.

    delta = 0 reproduces the input bit-for-bit. Voxels already at infinite
    SNR cannot rise and are rejected.
    """
    voxel_set = np.asarray(voxel_set, dtype=np.int64).ravel()
    n_vox = dataset.spec.n_voxels
    if voxel_set.size and (voxel_set.min() < 0 or voxel_set.max() >= n_vox):
        raise IndexError(
            f"voxel indices out of range for {n_vox} voxels: "
            f"[{voxel_set.min()}, {voxel_set.max()}]"
        )
    if not np.isfinite(delta) or delta < 0:
        raise ValidationError(f"delta must be finite and >= 0, got {delta}")

    snr_new = dataset.snr_per_voxel.copy()
    if delta > 0:
        target_r = expected_r(snr_new[voxel_set]) + delta
        if np.any(target_r >= 1.0):
            raise ValidationError(
                "delta pushes expected correlation to 1 or beyond at some voxels"
            )
        # delta = 0 skips this block so the snr round trip cannot perturb
        # the last bit of sigma
        snr_new[voxel_set] = target_r ** 2 / (1.0 - target_r ** 2)

    return SynthDataset(
        spec=dataset.spec,
        track=dataset.track,
        design=dataset.design,
        true_weights=dataset.true_weights,
        signal=dataset.signal,
        atlas=dataset.atlas,
        snr_per_voxel=snr_new,
        bold=_assemble_bold(dataset.spec, dataset.signal, snr_new),
    )
