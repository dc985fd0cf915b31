"""Graph-attention artist similarity: embeddings, evaluation, recommendations."""

__version__ = "0.1.0"
