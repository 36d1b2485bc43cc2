"""Coarse-to-fine map annotation: LLM labels distilled into an attention
classifier whose iterated attention maps become patch-level annotations."""

__version__ = "0.1.0"
