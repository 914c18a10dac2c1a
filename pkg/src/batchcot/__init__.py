"""Batch-inference reasoning-efficiency toolkit.

Prompt construction, batch-response chain extraction, exact numeric answer
verification, A/B/C preference-dataset construction, a verifiable GRPO
reference implementation on a toy policy, an inference client with a
deterministic mock engine, and an accuracy/token evaluation harness.
"""

__version__ = "0.1.0"
