"""Layer-wise embeddings from pretrained speech encoders, as FEA1 archives."""

__version__ = "0.1.0"
