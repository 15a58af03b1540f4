"""Relational triple extraction by iterated, globally refined table filling."""
__version__ = "0.1.0"

from .codec import decode_tables, encode_triples
from .core import EntitySpan, Label, LabelTable, RelationSchema, Sentence, Triple, canonical_triple_set
from .model import ModelConfig, TableFillingModel

__all__ = [
    "EntitySpan", "Label", "LabelTable", "RelationSchema", "Sentence", "Triple", "canonical_triple_set",
    "encode_triples", "decode_tables", "ModelConfig", "TableFillingModel", "__version__",
]
