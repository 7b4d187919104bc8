"""Video-to-gait reward synthesis at desk scale."""

__version__ = "0.1.0"
