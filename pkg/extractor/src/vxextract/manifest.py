"""Sentence manifest loading and validation."""

import json
from dataclasses import dataclass
from pathlib import Path


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Sentence:
    text: str
    onset_s: float
    duration_s: float


@dataclass(frozen=True)
class Manifest:
    run_id: str
    sentences: list


def load_manifest(path):
    """Parse and validate {run_id?, sentences: [{text, onset_s, duration_s}]}.

    Onsets must be sorted ascending, texts non-blank, durations positive.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict) or "sentences" not in raw:
        raise ManifestError(f"{path}: top level must be an object with 'sentences'")
    entries = raw["sentences"]
    if not isinstance(entries, list) or not entries:
        raise ManifestError(f"{path}: 'sentences' must be a non-empty list")

    sentences = []
    last_onset = None
    for i, ent in enumerate(entries):
        for key in ("text", "onset_s", "duration_s"):
            if not isinstance(ent, dict) or key not in ent:
                raise ManifestError(f"{path}: sentence {i} is missing '{key}'")
        text = ent["text"]
        if not isinstance(text, str) or not text.strip():
            raise ManifestError(f"{path}: sentence {i} has blank text")
        onset = float(ent["onset_s"])
        duration = float(ent["duration_s"])
        if onset < 0:
            raise ManifestError(f"{path}: sentence {i} has negative onset")
        if duration <= 0:
            raise ManifestError(f"{path}: sentence {i} needs a positive duration")
        if last_onset is not None and onset < last_onset:
            raise ManifestError(
                f"{path}: onsets must be sorted ascending, sentence {i} "
                f"starts at {onset} after {last_onset}"
            )
        last_onset = onset
        sentences.append(Sentence(text=text, onset_s=onset, duration_s=duration))
    return Manifest(run_id=str(raw.get("run_id", "run-0")), sentences=sentences)
