"""Command line: manifest + model in, stimulus track (JSON + VEM1) out."""

import argparse
import json
import sys
from pathlib import Path

from .extract import JobError, embed_sentences, load_model
from .manifest import ManifestError, load_manifest
from .vemwrite import write_matrix


def write_track(manifest, vectors, out_prefix):
    """Write {prefix}.json and {prefix}.vem in the stimulus track layout."""
    out_prefix = Path(out_prefix)
    if out_prefix.suffix == ".json":
        out_prefix = out_prefix.with_suffix("")
    json_path = out_prefix.with_suffix(".json")
    vem_path = out_prefix.with_suffix(".vem")
    write_matrix(vectors, vem_path)
    meta = {
        "dim": int(vectors.shape[1]),
        "run_id": manifest.run_id,
        "vectors": vem_path.name,
        "events": [
            {"onset_s": s.onset_s, "duration_s": s.duration_s, "vector_row": i}
            for i, s in enumerate(manifest.sentences)
        ],
    }
    json_path.write_text(json.dumps(meta, indent=2) + "\n")
    return json_path, vem_path


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vxextract",
        description="embed manifest sentences with a pretrained model and "
                    "write a stimulus track",
    )
    parser.add_argument("--model", required=True,
                        help="hub id or local checkpoint directory")
    parser.add_argument("--manifest", required=True)
    parser.add_argument("--out", required=True,
                        help="output prefix; writes <out>.json and <out>.vem")
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--device", default="cpu")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        manifest = load_manifest(args.manifest)
    except ManifestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        tokenizer, model = load_model(args.model, device=args.device)
        vectors = embed_sentences(
            tokenizer, model, [s.text for s in manifest.sentences],
            batch_size=args.batch_size, device=args.device,
        )
    except ManifestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except JobError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    json_path, vem_path = write_track(manifest, vectors, args.out)
    print(f"embedded {len(manifest.sentences)} sentences "
          f"({vectors.shape[1]} dims) into {json_path} + {vem_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
