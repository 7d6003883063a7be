"""Small-signal synchronous stability of GFM/GFL converter networks."""

__version__ = "0.1.0"
