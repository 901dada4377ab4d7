"""Desk-scale toolkit for adapting a language model to a low-resource language."""

__version__ = "0.1.0"

from .adapters import AdapterLayer, adapter_forward, adapter_grads, gradient_check, scaling_factor
from .corpus import chunk_document, prepare_corpus
from .metrics import bleu, bootstrap_stderr, chrf
from .perplexity import normalize_ppl, ppl_from_nll
from .report import render_report
from .sft import assemble_pool, serialize_chatml
from .tokenizer import Tokenizer

__all__ = [
    "AdapterLayer", "Tokenizer", "adapter_forward", "adapter_grads", "assemble_pool", "bleu",
    "bootstrap_stderr", "chrf", "chunk_document", "gradient_check", "normalize_ppl",
    "ppl_from_nll", "prepare_corpus", "render_report", "scaling_factor", "serialize_chatml",
]
