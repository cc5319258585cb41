"""Multi-modal RAG generation, reward polishing and evaluation of acceptance criteria."""

__version__ = "0.1.0"
