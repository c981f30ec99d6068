"""Asynchronous federated learning with pruning: protocol library plus
discrete-event simulator."""

from .aggregation import (ClientRecord, ServerBuffer, StalenessWeights,
                          fed_avg, mask_fed_avg, staleness_weights,
                          update_buffer)
from .config import (RunConfig, config_from_dict, dumps_config, load_config,
                     make_lr_schedule, save_config)
from .datagen import PartitionSpec, generate_dataset, partition
from .distribution import (DeltaPacket, IndexRange, SubmodelSet,
                           build_submodels, client_download_bytes,
                           encode_deltas, index_for, reconstruct)
from .errors import ConfigError, InvariantError
from .metrics import (accuracy_at_time, read_metrics_csv, time_to_accuracy,
                      write_metrics_csv)
from .model import (Dataset, Mask, ParamVector, TrainSpec, apply_mask,
                    init_model, local_train, loss_and_gradient, mask_of,
                    mlp_shapes, predict_logits, test_acc)
from .network import (MEGABYTE, Endpoint, EventKind, EventQueue,
                      FairShareNetwork, SimEvent, Transfer,
                      aggregation_tick_times, effective_rate, sample_speed,
                      schedule_transfer)
from .orchestrator import (PerClientStats, RoundReport, RunResult, Simulation,
                           run_simulation)
from .pruning import (DensityState, EarlyStopper, TimeQueue, compute_density,
                      mean_round_time, prune_to_density, should_terminate)
from .variants import VARIANTS, VariantToggles

__version__ = "0.1.0"

__all__ = [
    "ClientRecord", "ServerBuffer", "StalenessWeights", "fed_avg",
    "mask_fed_avg", "staleness_weights", "update_buffer",
    "RunConfig", "config_from_dict", "dumps_config", "load_config",
    "make_lr_schedule", "save_config",
    "PartitionSpec", "generate_dataset", "partition",
    "DeltaPacket", "IndexRange", "SubmodelSet", "build_submodels",
    "client_download_bytes", "encode_deltas", "index_for", "reconstruct",
    "ConfigError", "InvariantError",
    "accuracy_at_time", "read_metrics_csv", "time_to_accuracy",
    "write_metrics_csv",
    "Dataset", "Mask", "ParamVector", "TrainSpec", "apply_mask", "init_model",
    "local_train", "loss_and_gradient", "mask_of", "mlp_shapes",
    "predict_logits", "test_acc",
    "MEGABYTE", "Endpoint", "EventKind", "EventQueue", "FairShareNetwork",
    "SimEvent", "Transfer", "aggregation_tick_times", "effective_rate",
    "sample_speed", "schedule_transfer",
    "PerClientStats", "RoundReport", "RunResult", "Simulation",
    "run_simulation",
    "DensityState", "EarlyStopper", "TimeQueue", "compute_density",
    "mean_round_time", "prune_to_density", "should_terminate",
    "VARIANTS", "VariantToggles",
    "__version__",
]
