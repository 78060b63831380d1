"""Dialog state tracking over ASR word confusion networks with a cnet GRU encoder."""
from .cnet import (
    DEFAULT_INTERJECTIONS, NULL_TOKEN, ConfusionNetwork, CoverageReport, Hypothesis, Timestep, cnet_size_summary,
    coverage_stats, degenerate_cnet, one_best_cnet, parse_cnet, parse_cnet_blocks, prune_cnet, read_cnet,
    serialize_cnet,
)
from .corpus import (
    Dialog, DialogActTriple, SynthConfig, Turn, Vocabulary, acts_to_tokens, build_vocab, generate_synthetic,
    load_corpus, load_embeddings, synthetic_split, turn_inputs, write_corpus,
)
from .encoder import GruParams, PoolingMode, TurnCombinerParams, combine_turn, encode_cnet, encode_timestep, gru_step
from .errors import (
    CheckpointError, CnetDstError, CnetParseError, ConfigError, CorpusError, DegenerateWeightsError,
    GradCheckError, StructureError, TrainingError,
)
from .estimator import CnetPruner, CnetTracker, EnsembleTracker
from .model import (
    DstModel, ModelConfig, TurnPrediction, dialog_loss, ensemble_predict, forward_dialog, joint_accuracy,
    load_checkpoint, save_checkpoint, train,
)
from .ontology import DialogState, Ontology

__version__ = "0.1.0"
