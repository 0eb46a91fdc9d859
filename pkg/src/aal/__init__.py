"""Pool-based adaptive active learning with batch addition and deletion."""

__version__ = "0.1.0"
