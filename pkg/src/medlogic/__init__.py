"""medlogic: logic-infused knowledge-graph pipeline for medical abstractive QA.

The package turns QA corpora into first-order-logic-enriched fine-tuning
records and scores model output with a reference metric battery. See the
README for the command-line entry points.
"""

__version__ = "0.1.0"

from .kg import (  # noqa: F401
    KnowledgeGraph,
    RelationKind,
    Triple,
    build_graph,
    normalize_concept,
)
