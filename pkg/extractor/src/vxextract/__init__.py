"""Sentence embedding extraction from pretrained masked language models.

Loads a model by hub id or local checkpoint path, mean-pools last-layer
hidden states per sentence, and writes the stimulus track files (JSON plus
VEM1 matrix) consumed by the encoding toolkit. The file formats are written
directly against their published layouts; the toolkit itself is never
imported.
"""

from .extract import JobError, embed_sentences, load_model
from .manifest import Manifest, ManifestError, Sentence, load_manifest
from .vemwrite import write_matrix

__version__ = "0.1.0"

__all__ = [
    "JobError",
    "Manifest",
    "ManifestError",
    "Sentence",
    "embed_sentences",
    "load_manifest",
    "load_model",
    "write_matrix",
    "__version__",
]
