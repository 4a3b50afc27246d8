"""Storyboard ordering toolkit.

Turns precomputed text-synopsis embeddings into ordered keyframe
storyboards.  The package covers the whole desk-scale workflow: binary
embedding tables, a synthetic planted-order corpus, vector-quantized
codebooks, a hand-rolled transformer decoder trained with manual
backpropagation, similarity baselines, retrieval, and a two-protocol
evaluation harness behind a single CLI.
"""

from storyorder.data import (
    DataFormatError,
    DatasetSplit,
    EmbeddingTable,
    StoryboardExample,
    load_dataset,
    load_embeddings,
    save_dataset,
    save_embeddings,
    split_dataset,
)
from storyorder.synth import SynthConfig, generate_synthetic
from storyorder.vq import (
    Codebook,
    QuantizeResult,
    codebook_utilization,
    quantize,
    quantize_any,
    quantize_hierarchical,
    quantize_multi_stage,
    quantize_soft,
    straight_through,
    straight_through_backward,
    vq_loss,
)
from storyorder.model import (
    ModelConfig,
    OrdererModel,
    RerankConfig,
    RerankModel,
    build_prefix_mask,
    forward,
)
from storyorder.losses import align_loss, nce_loss, total_loss
from storyorder.training import (
    TrainConfig,
    TrainingDiverged,
    grad_check,
    train_orderer,
    train_rerank,
    train_retrieval_head,
)
from storyorder.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from storyorder.ordering import OrderingResult, order_rerank, order_vq_trans
from storyorder.baselines import (
    TableSegmentEmbedder,
    bipartite_match,
    enumerate_segmentations,
    order_contextual,
    order_cumulative,
    order_dynamic,
    order_naive,
    order_sliding,
    segment_text,
)
from storyorder.evaluation import (
    EvalReport,
    bucket_report,
    build_candidate_pool,
    evaluate_ordering,
    evaluate_retrieval,
    evaluate_retrieve_order,
    kendall_tau,
    recall_at_k,
    render_report_text,
    retrieve_and_order_score,
    tau_best,
)
from storyorder.retrieval import RetrievalHead, project_table, retrieve_topk
from storyorder.stats import CorpusStats, corpus_stats, load_concreteness_lexicon

__version__ = "0.1.0"
