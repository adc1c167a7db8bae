"""Risk model: relational graph convolutions, node pooling, temporal encoders."""
from .batch import (GraphBatch, PreparedClip, RelationGroup, VocabularyError, make_batch,
                    prepare_clip, relation_groups)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .network import (POOLING, READOUTS, TEMPORAL, AttentionTrace, LSTMCell, ModelConfig,
                      ParameterSet, RelationalConv, RiskModel, class_weights,
                      init_node_embeddings, mrgcn_forward, readout, segment_softmax,
                      spatial_concat, temporal_encode, topk_pool, topk_select,
                      weighted_cross_entropy)

__all__ = [name for name in dir() if not name.startswith("_")]
