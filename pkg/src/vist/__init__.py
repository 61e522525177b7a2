"""Slow-fast language modelling over rendered text.

Early context is rasterized into images, encoded by a small frozen vision
transformer and resampled into a fixed number of visual tokens per image;
a decoder reads those through gated cross-attention while it processes
the recent tokens as text.
"""

__version__ = "0.1.0"
