"""Small decoder-only language model with three tuning regimes."""

from .model import (
    PrefixBank,
    ToyLmConfig,
    compute_loss,
    embed_sequence,
    final_hidden,
    forward,
    init_params,
    init_prefix,
    loss_and_grads,
    param_names,
    param_shapes,
)
from .modelio import load_model, save_model
from .task import (
    TokenSequence,
    make_classification_data,
    make_pretrained,
    make_warmup_data,
)
from .tune import TuneConfig, TuneResult, grad_check, select_trainable, tune
