"""Conditional abstract generation toolkit.

Pipeline: annotated JSONL corpus -> subword tokenizer and condition
vocabularies -> encoder-decoder transformer trained with LAMB on four
prediction tasks (next subword, POS, dependency, entity) -> title-prompted
sampling -> sentence-level metric report (BLEU variants, ROUGE-L, METEOR,
CIDEr, CIDEr-Title).
"""

__version__ = "0.1.0"
