from .config import ModelConfig
from .network import DecoderState, EncoderState, KnowledgeInformedModel, knowledge_bias
from .permutation import (
    assemble_graph,
    gumbel_sinkhorn,
    hungarian,
    log_sinkhorn,
    sample_graphs,
    straight_through,
    threshold_graph,
)

__all__ = [
    "ModelConfig", "EncoderState", "DecoderState", "KnowledgeInformedModel", "knowledge_bias",
    "assemble_graph", "gumbel_sinkhorn", "hungarian", "log_sinkhorn", "sample_graphs",
    "straight_through", "threshold_graph",
]
