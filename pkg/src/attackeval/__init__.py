"""Analysis toolkit for ATT&CK enterprise evaluation results.

Pipeline: :mod:`ingest` (records) -> :mod:`normalize` (shared taxonomy) ->
:mod:`metrics` and :mod:`graph` (analyses) -> :mod:`report` / :mod:`cli`.
"""

__version__ = "0.1.0"
