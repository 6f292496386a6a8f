"""Author-conditioned summarization of conversations into note sections, at desk scale."""

__version__ = "0.1.0"
