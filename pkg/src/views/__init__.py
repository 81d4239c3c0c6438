"""Entity-aware news video captioning: dataset builder, models, metrics.

The pipeline has three stages: an entity perceiver decodes a structured
entity string from video features, a knowledge extractor turns those
entities into a news context passage, and a captioning model fuses the
video with both to produce an entity-rich caption. This package carries
the full loop at desk scale: corpus handling, the LLM-driven dataset
builder with its human correction queue, training and decoding for both
models, caption metrics, and a spec-driven experiment harness.
"""

from .captioner import (
    AblationConfig,
    CaptioningModel,
    CMConfig,
    VIBundle,
    assemble_vi_bundle,
    generate,
    train_cm,
)
from .corpus import (
    CaptionRecord,
    Corpus,
    CorpusSplit,
    VideoSample,
    load_corpus,
    save_corpus,
    split_by_date,
    split_random,
)
from .entities import EntitySet, entity_signature, parse_entity_set, serialize_entity_set
from .errors import ViewsError
from .harness import (
    ExperimentReport,
    ExperimentSpec,
    load_spec,
    run_ablation_table,
    run_ke_studies,
    run_pipeline,
    run_time_generalization,
)
from .knowledge import ContextPassage, MockKB, extract_context, score_context
from .llm import LiveLLM, MockLLM, ReplayLLM
from .metrics import (
    MetricReport,
    bleu4,
    cider_d,
    compute_report,
    entity_f1,
    hallucination_strict,
    rouge_l,
)
from .perceiver import EntityPerceiver, EPConfig, decode_entities, train_ep
from .seq2seq import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "AblationConfig",
    "CaptioningModel",
    "CaptionRecord",
    "CMConfig",
    "ContextPassage",
    "Corpus",
    "CorpusSplit",
    "EntityPerceiver",
    "EntitySet",
    "EPConfig",
    "ExperimentReport",
    "ExperimentSpec",
    "LiveLLM",
    "MetricReport",
    "MockKB",
    "MockLLM",
    "ReplayLLM",
    "TrainConfig",
    "VIBundle",
    "VideoSample",
    "ViewsError",
    "assemble_vi_bundle",
    "bleu4",
    "cider_d",
    "compute_report",
    "decode_entities",
    "entity_f1",
    "entity_signature",
    "extract_context",
    "generate",
    "hallucination_strict",
    "load_corpus",
    "load_spec",
    "parse_entity_set",
    "rouge_l",
    "run_ablation_table",
    "run_ke_studies",
    "run_pipeline",
    "run_time_generalization",
    "save_corpus",
    "score_context",
    "serialize_entity_set",
    "split_by_date",
    "split_random",
    "train_cm",
    "train_ep",
]
