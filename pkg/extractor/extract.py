#!/usr/bin/env python3
"""Entry point: extract sentence embeddings into a stimulus track."""

import sys

from vxextract.cli import main

if __name__ == "__main__":
    sys.exit(main())
