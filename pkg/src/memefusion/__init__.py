"""Fusion-transformer classifiers for misogynous memes.

Two variants share an early-fusion encoder over caption tokens and image
regions: one appends vocabulary-graph embeddings before attention, the
other concatenates an image-sentiment vector onto the pooled output.
Member predictions are combined by soft voting.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("memefusion")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

__all__ = ["__version__"]
