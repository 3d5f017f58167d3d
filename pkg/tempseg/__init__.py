__project_name__ = 'tempseg'
__description__ = 'Multi-stage temporal convolutional networks for frame-wise action segmentation'
__homepage__ = 'https://github.com/plotski/tempseg'
__version__ = '0.0.0'
__author__ = 'plotski'
__author_email__ = 'plotski@example.org'

import logging  # isort:skip
from . import __project_name__  # isort:skip
_log = logging.getLogger(__project_name__)
_debug = _log.debug
_info = _log.info
_warning = _log.warning

from ._cli import cli
from ._data import (DatasetBundle, SyntheticSpec, VideoSample,
                    generate_synthetic, load_dataset, load_features,
                    load_mapping, save_dataset, save_features,
                    temporal_downsample)
from ._errors import (BadMagicError, CheckpointError, ConfigError, DataError,
                      DimensionError, DivergenceError, DomainError,
                      FormatError, GradientCheckError, TempsegError,
                      TruncatedError, VersionError)
from ._gradcheck import finite_difference_check
from ._layers import (DilatedResidualLayerParams, DualDilatedLayerParams,
                      HeadParams, classification_head, ddl_dilations,
                      dilated_residual_forward, dual_dilated_forward,
                      receptive_field)
from ._loss import (LossConfig, LossValue, cross_entropy, kl_smoothing,
                    t_mse, total_loss)
from ._metrics import (EvalReport, Segment, evaluate_by_duration,
                       evaluate_set, frame_accuracy, labels_to_segments,
                       overlap_f1, segmental_edit_score)
from ._model import (Model, ModelConfig, StageOutputs, Variant,
                     architecture_report, build_model, count_parameters,
                     forward, predict_labels)
from ._tensor import ConvParams
from ._trainer import (OptimizerState, TrainConfig, adam_step, evaluate, fit,
                       load_checkpoint, save_checkpoint)
