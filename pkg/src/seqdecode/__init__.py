"""Model-agnostic sequence decoding over emission lattices.

The package decodes T x V log-probability matrices (stand-ins for
encoder-plus-softmax output) with pluggable scorers: label-synchronous beam
search with joint CTC / attention-table / LM weighting in sequential and
vectorized-batch variants, five transducer procedures, non-autoregressive
mask-predict refinement, CTC forward scoring, forced alignment, and
blank-posterior VAD, plus brute-force oracles for verifying all of it on
tiny inputs.
"""

from .beam_search import BeamConfig, batch_beam_search, beam_search, end_detect
from .core import (
    ConfigError,
    DecodeError,
    EmissionMatrix,
    FormatError,
    Hypothesis,
    InfeasibleError,
    NBestEntry,
    NBestList,
    Vocabulary,
    load_emission,
    logsumexp,
    save_emission,
    validate_hypothesis,
)
from .ctc import Alignment, Segment, TokenSpan, ctc_forced_align, ctc_forward, ctc_greedy, ctc_vad
from .lm import (
    LookAheadLMScorer,
    MultiLevelLMScorer,
    NGramModel,
    WordTrie,
    load_arpa,
    load_lexicon,
    lookahead_score,
    multilevel_score,
    ngram_score,
    sentence_logprob,
)
from .maskctc import (
    MaskCtcConfig,
    MaskCtcResult,
    MLMScorer,
    TableMLM,
    ctc_confidence_collapse,
    mask_ctc_decode,
    mlm_call_count,
)
from .oracle import (
    OracleBudget,
    oracle_best_sequence,
    oracle_ctc_prob,
    oracle_transducer_prob,
    score_sequence,
)
from .scorers import (
    CTCPrefixScorer,
    CTCPrefixState,
    FullScorer,
    PartialScorer,
    TableScorer,
    wrap_full_as_partial,
)
from .transducer import (
    TableTransducer,
    TransducerBeamConfig,
    TransducerHypothesis,
    TransducerModel,
    fuse_lm_scores,
    transducer_alsd,
    transducer_beam,
    transducer_decode,
    transducer_greedy,
    transducer_nsc,
    transducer_tsd,
)

__version__ = "0.1.0"
