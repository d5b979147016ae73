"""Voxel-wise neural encoding toolkit with a desk-scale tuning lab.

The package covers the full loop: synthesize or load stimulus tracks and BOLD
runs, convolve embeddings into design matrices, fit regularized per-voxel
encoders under cross-validation, compare model variants across subjects, and
probe a small transformer's tuning regimes that feed the embeddings.
"""

from .errors import (
    ConfigError,
    ConvergenceError,
    CorruptionError,
    DegenerateSolutionError,
    DegenerateTestError,
    FormatError,
    ShapeError,
    TrainingError,
    UndefinedCorrelationError,
    ValidationError,
    VoxelencError,
)
from .matrixio import (
    BoldRun,
    RoiAtlas,
    StimulusTrack,
    load_atlas,
    load_bold_run,
    load_stimulus_track,
    read_matrix,
    save_atlas,
    save_bold_run,
    save_stimulus_track,
    write_matrix,
)
from .synth import SynthDataset, SynthSpec, expected_r, generate, plant_effect

__version__ = "0.1.0"
