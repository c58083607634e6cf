"""Few-shot NER with chat LLMs via delimiter-tagged generations.

The pipeline: retrieve the most similar annotated sentences for a query,
assemble a role-structured chat prompt whose example outputs use a
delimiter-tagged markup, decode the model's generation back into entity
spans, and score entity-level P/R/F1. A replay cache makes whole experiments
bit-reproducible offline.
"""

from .config import RunConfig, load_config
from .corpus import (CONLL2003, WNUT2017, EntitySpan, LabeledExample, LabelSchema, Token,
                     bio_tags, from_json_record, get_schema, load_corpus, make_example,
                     parse_iob, save_corpus, subsample_pool, to_json_record)
from .harness import (NeighborCache, RunResult, ablate_roles, ablate_tags,
                      make_echo_gold_responder, make_noisy_gold_responder, run_experiment,
                      sweep)
from .llm_client import (CacheMissError, CompletionRequest, CompletionResult, LiveBackend,
                         MockBackend, PriceTable, ReplayBackend, TransportError, cost_of,
                         estimate_tokens, request_digest)
from .marking import (TAG_PRESETS, Decoding, Diagnostic, RepairKind, TagConfig, decode_json,
                      decode_tagged, encode_json, encode_tagged, get_tag_config,
                      validate_tag_config, well_formed_presets)
from .prompting import (CANONICAL_ROLE_CODES, ChatMessage, PromptPlan, RoleSetting,
                        TemplateError, build_messages, default_instruction,
                        render_instruction)
from .retrieval import (HashedBagEmbedder, IndexLoadError, Neighbor, RemoteEmbedder,
                        VectorIndex, build_index, make_embedder)
from .scoring import Prediction, ScoreReport, aggregate, format_table, prf, score

__version__ = "0.1.0"
