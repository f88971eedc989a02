"""Target-conditioned fixation density prediction and search-segmentation evaluation."""

__version__ = "0.1.0"
