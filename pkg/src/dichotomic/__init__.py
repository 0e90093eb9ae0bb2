"""Multi-label classification as cache-friendly dichotomic LLM queries."""

__version__ = "0.1.0"
