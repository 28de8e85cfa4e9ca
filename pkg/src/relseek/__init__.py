"""relseek: multi-hop question answering over knowledge graphs.

Entity-seeking queries are answered in two stages: a beam search over
relation sequences on a lazily coalesced view of the graph produces a
candidate set that provably covers the answers, and an optional
message-passing refiner re-ranks the candidates on the induced subgraph.
"""

from .coalesce import (
    EntitySet,
    PathCount,
    enumerate_reachable_sets,
    path_count_stats,
    reach,
    reach_step,
)
from .epfo import (
    DnfQuery,
    EpfoQuery,
    cover_sequences,
    evaluate,
    parse_query,
    random_query,
    to_dnf,
    validate,
)
from .kg import (
    SELF_ID,
    SELF_RELATION,
    KnowledgeGraph,
    TripleParseError,
    TripleRecord,
    load_triples,
    save_triples,
)
from .refiner import RefineEpisode, RefinerModel, refine, train_refiner
from .scorer import (
    FeaturizedScorer,
    OracleScorer,
    QAExample,
    ScoreRequest,
    ScorerContractError,
    UniformScorer,
    train,
    weak_labels,
)
from .seeker import BeamEntry, SeekResult, candidate_subgraph, seek
from .synthbench import SynthSpec, gen_random_graph, gen_synthetic

__version__ = "0.1.0"

__all__ = [
    "BeamEntry",
    "DnfQuery",
    "EntitySet",
    "EpfoQuery",
    "FeaturizedScorer",
    "KnowledgeGraph",
    "OracleScorer",
    "PathCount",
    "QAExample",
    "RefineEpisode",
    "RefinerModel",
    "ScoreRequest",
    "ScorerContractError",
    "SeekResult",
    "SELF_ID",
    "SELF_RELATION",
    "SynthSpec",
    "TripleParseError",
    "TripleRecord",
    "UniformScorer",
    "candidate_subgraph",
    "cover_sequences",
    "enumerate_reachable_sets",
    "evaluate",
    "gen_random_graph",
    "gen_synthetic",
    "load_triples",
    "parse_query",
    "path_count_stats",
    "random_query",
    "reach",
    "reach_step",
    "refine",
    "save_triples",
    "seek",
    "to_dnf",
    "train",
    "train_refiner",
    "validate",
    "weak_labels",
]
