"""Span-level data augmentation for low-resource NER corpora.

The package turns a small tagged corpus into a larger one by linearizing
sentences into a reversible bracketed form, masking parts of them with
composable operations, asking a generation backend (mock or HTTP) to fill the
masks, filtering the results for label consistency, and optionally driving an
iterative self-training loop. See README.md for the CLI walkthrough.
"""

__version__ = "0.1.0"
