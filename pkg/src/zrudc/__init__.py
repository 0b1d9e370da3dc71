"""Zero-reference enhancement of photos taken through a display panel.

A small U-Net predicts a grid of 3x4 affine colour transforms from a 256x256
proxy; the grid is max-pooled to control its rank, upsampled to full
resolution and applied through a learned 12-to-3 channel convolution.
"""

__version__ = "0.1.0"
