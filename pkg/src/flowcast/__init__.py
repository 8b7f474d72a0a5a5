"""Edge traffic prognosis: flow summarization, LSTM encoder-decoder
forecasting, and per-feature evaluation reports."""

__version__ = "0.1.0"

from .dataset import (FEATURE_COLUMNS, FEATURE_NAMES, FEATURE_UNITS,
                      ScalerParams, WindowedDataset, WindowSpec, feature_matrix,
                      fit_scaler, load_dataset, make_windows, save_dataset, split)
from .errors import (FlowcastError, NumericError, PacketLogError, ShapeError,
                     SizingError)
from .flows import (FlowRecord, PacketEvent, bin_packets, export_flow_records,
                    parse_packet_log, read_flow_records, summarize_bin)
from .metrics import MetricsReport, PredictionSeries, evaluate, r2, rmse
from .seq2seq import (HuberConfig, Seq2SeqModel, backward, decode, encode,
                      forward, huber, load_checkpoint, project, repeat_vector,
                      save_checkpoint)
from .synth import generate_flow_records
from .training import (AdamState, TrainConfig, TrainHistory, adam_step, fit,
                       init_params, lr_schedule, train_epoch)

__all__ = [
    "FEATURE_COLUMNS", "FEATURE_NAMES", "FEATURE_UNITS",
    "AdamState", "FlowRecord", "FlowcastError", "HuberConfig", "MetricsReport",
    "NumericError", "PacketEvent", "PacketLogError", "PredictionSeries",
    "ScalerParams", "Seq2SeqModel", "ShapeError", "SizingError", "TrainConfig",
    "TrainHistory", "WindowSpec", "WindowedDataset",
    "adam_step", "backward", "bin_packets", "decode", "encode", "evaluate",
    "export_flow_records", "feature_matrix", "fit", "fit_scaler", "forward",
    "generate_flow_records", "huber", "init_params", "load_checkpoint",
    "load_dataset", "lr_schedule", "make_windows", "parse_packet_log",
    "project", "r2", "read_flow_records", "repeat_vector", "rmse",
    "save_checkpoint", "save_dataset", "split", "summarize_bin", "train_epoch",
]
