"""Lifelong learning for small CTC sequence recognizers.

Submodules:
  autodiff   reverse-mode AD over float64 arrays, parameter vectors
  optim      SGD / momentum / Adam with global-norm clipping
  model      downsampling recurrent encoder and checkpoints
  ctc        CTC loss, greedy and prefix beam decoding
  lm         add-k smoothed n-gram language model
  lifelong   EWC / SI / KD penalties, GEM projection, episodic memory
  data       synthetic multi-domain task generation
  metrics    edit distance and WER
  training   sequential / multitask / sweep experiment loops
  reporting  CSV outputs
  cli        command-line interface
"""

from .autodiff import ParameterVector, Tensor, backward, finite_diff_check
from .ctc import InfeasibleAlignment, beam_decode, ctc_loss, greedy_decode
from .data import DomainSpec, TaskDataset, generate_domain
from .lifelong import (
    EpisodicMemory,
    RegularizerConfig,
    SIState,
    ewc_penalty,
    fisher_diagonal,
    gem_project,
    kd_loss,
    select_for_memory,
    si_consolidate,
)
from .lm import NGramLM, lm_train
from .metrics import edit_distance, word_error_rate
from .model import ModelConfig, Utterance, model_forward, model_init, model_logits
from .optim import OptimizerConfig, optimizer_step
from .training import (
    RunConfig,
    RunReport,
    default_config,
    relative_wer_reduction,
    run_memory_sweep,
    run_multitask,
    run_sequential,
)

__version__ = "0.1.0"
