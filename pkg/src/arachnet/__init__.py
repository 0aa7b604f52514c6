"""Composable Internet-measurement workflow engine.

Four pipeline stages (query analysis, workflow exploration, plan
compilation + execution, pattern curation) over a curated capability
registry, with optional expert review gates between stages, an HTTP API,
and a thin-client CLI.
"""

__version__ = "0.1.0"
