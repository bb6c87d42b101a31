"""Gated fusion of patch-quality and semantic features for NR-IQA.

Core pieces: a small reverse-mode autodiff kernel (:mod:`.autodiff`,
:mod:`.nn`), the patch-scoring quality backbone (:mod:`.backbone`), the
semantic feature cache and prompts (:mod:`.semantic`, :mod:`.cache`),
the adaptive fusion module (:mod:`.afm`), rank/error metrics
(:mod:`.metrics`), and the training pipeline (:mod:`.data`,
:mod:`.training`). The CLI lives in :mod:`.cli`.
"""

__version__ = "0.1.0"

from .errors import IQFusionError  # noqa: F401
