"""Anomaly-score fusion, context-aware keyframe sampling, object track
association, relational volatility mining and a contrastive relation
encoder, operating on per-frame feature bundles."""

__version__ = "0.1.0"
