"""Diagonal-gated convolutional GRU networks for learning algorithms from examples."""

__version__ = "0.1.0"

from .autodiff import (DataError, Parameter, ShapeError, Tensor, UsageError,
                       backward, grad_check, no_grad)
from .cells import (CellParams, DiagonalSplit, DropoutSpec, SaturationAccumulator,
                    apply_recurrent_dropout, cgru_step, dcgru_step, saturation_cost)
from .model import (ForwardResult, ModelConfig, ModelParams, embed, forward,
                    init_params, predict, total_loss)
from .optimizer import (AdaMaxState, LrSchedule, OptimConfig, adamax_apply,
                        add_gradient_noise, clip_by_decayed_max, lr_for_maps)
from .tasks import (Alphabet, Example, TaskSpec, bin_and_pad, build_dataset,
                    decode_decimal_binary, encode_decimal_binary, get_task)
from .trainer import (BinnedDataset, CheckpointError, RunConfig, TrainState,
                      evaluate, init_state, load_checkpoint, run_training,
                      save_checkpoint, train_step)

__all__ = [name for name in dir() if not name.startswith("_")]
