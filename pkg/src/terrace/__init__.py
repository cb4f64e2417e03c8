"""Building footprint instance segmentation from multispectral tiles.

A small U-Net predicts a footprint mask and a touching-border mask; a
marker-driven watershed turns the pair into building instances.
"""
__version__ = "0.1.0"
