"""Check-worthiness estimation with sentence embeddings fused with OpenIE triples."""

__version__ = "0.1.0"
