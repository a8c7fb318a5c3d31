"""Staged multimodal retrieval: shortlist, decompose, ground, fuse, evaluate.

The public surface re-exports the domain types and stage operations; see
the module docstrings for the contracts.
"""

from .corpus import (EmbeddingVector, ImageRecord, QueryRecord, RegionRecord,
                     RleMask, load_corpus, load_queries, rle_decode, rle_encode,
                     save_corpus, save_queries)
from .errors import (CalibrationDivergedError, CorpusFormatError,
                     DegenerateEmbeddingError, DimensionMismatchError,
                     HuliragError, PipelineStageError, RatingParseError,
                     ServiceError)
from .evaluation import (EvalReport, JudgeRequest, build_report, exact_match,
                         mean_recall, normalize_answer, parse_rating,
                         recall_at_k, render_judge_prompt, rubric_score,
                         token_f1)
from .objectives import (AnswerDistribution, ContrastiveBatch,
                         combined_contrastive_loss, consistency_loss,
                         hybrid_sample, info_nce, total_ft_loss, vqa_loss)
from .phrases import (Phrase, extract_phrases, jaccard, lemmatize,
                      lexical_set_of, merge_phrases)
from .pipeline import PipelineConfig, run_pipeline, run_stage
from .regions import (Detection, LocalScore, apply_mask, attach_detections,
                      binarize_mask, compute_alpha_weights, filter_detections,
                      load_detections, local_score, score_image, select_regions,
                      weighted_regions)
from .retrieval import RankedList, ShortlistIndex, cosine_similarity, top_k
from .reweight import (CalibrationConfig, CalibrationExample, CalibrationPool,
                       CalibrationResult, ReweightParams, ScoredCandidate,
                       build_calibration_pool, calibrate, calibrate_pooled,
                       fuse, minmax_normalize, rerank, reweight_gradient,
                       reweight_loss, scored_candidates, select_hard_negative)
from .synthetic import SyntheticBundle, fusion_benchmark, seed_for, smoke_bundle

__version__ = "0.1.0"
