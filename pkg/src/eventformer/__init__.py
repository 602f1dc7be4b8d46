"""Event-chain prediction with node-graph hierarchical attention."""
from .events import (
    ArgRole,
    EventChain,
    EventGraph,
    Node,
    Vocabulary,
    chain_stats,
    make_chain,
    read_corpus,
    validate_chain,
    write_corpus,
)
from .encoding import StubProvider, coreference_encoding, embed_chain, make_provider
from .model import EventFormer, ModelConfig, count_parameters

__version__ = "0.1.0"
