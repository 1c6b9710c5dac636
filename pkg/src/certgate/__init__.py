"""Certificate-gated execution of proposed agent traces."""

__version__ = "0.1.0"
