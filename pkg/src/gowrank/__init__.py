"""Graph-of-word re-ranking engine.

First-stage BM25 retrieval plus a trainable re-ranker that matches queries
against word co-occurrence graphs built from each document.
"""

__version__ = "0.1.0"
