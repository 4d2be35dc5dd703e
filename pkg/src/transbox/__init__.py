"""TransBox: EL++-closed box embeddings of description-logic ontologies."""

__version__ = "0.1.0"
