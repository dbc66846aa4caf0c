"""Test-gated code dataset pipeline.

Stages: ingest a raw corpus, extract standalone functions, generate unit
tests with an LLM, execute function/test pairs in an isolated worker,
iteratively repair failures, refine passing code, and export prefix/completion
training pairs with package-diversity statistics.
"""

__version__ = "0.1.0"
