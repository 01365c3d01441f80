"""Incremental gradient descent as a user-defined aggregate."""
from .core import (AggState, ConvergencePolicy, EpochRecord, StepSizeSchedule, TrainResult,
                   compute_loss, converged, initialize, merge, run_epoch, step_size, terminate,
                   train, transition)
from .data import Dataset
from .model import Model
from .ordering import OrderingStrategy, catx_closed_form, gen_catx, permute
from .parallel import ExecutionScheme, partition, run_epoch_averaging, run_epoch_shared
from .tasks import Example, Regularizer, TaskSpec, grad, loss_term, predict, prox

__version__ = "0.1.0"
