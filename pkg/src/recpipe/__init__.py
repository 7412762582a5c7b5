"""Locale-independent session-based next-item recommendation.

Candidate items come from co-visitation statistics; a native gradient-
boosted-trees classifier re-ranks them over locale-free session/item
features; evaluation is MRR@K.
"""

from .corpus import ItemId, Product, ProductCatalog, SessionRecord, synth_corpus
from .covis import CovisStore, ItemStats, NextStore, build_covis, build_item_stats, build_next
from .featgen import FEATURE_SCHEMA
from .gbdt import GbdtModel, GbdtParams

__version__ = "0.1.0"

__all__ = [
    "ItemId",
    "SessionRecord",
    "Product",
    "ProductCatalog",
    "synth_corpus",
    "CovisStore",
    "NextStore",
    "ItemStats",
    "build_covis",
    "build_next",
    "build_item_stats",
    "FEATURE_SCHEMA",
    "GbdtParams",
    "GbdtModel",
    "__version__",
]
