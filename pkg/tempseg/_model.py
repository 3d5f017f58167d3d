import copy
import dataclasses
import enum
import typing

import numpy as np

from . import _debug
from ._errors import ConfigError, DimensionError
from ._layers import (DilatedResidualLayerParams, DualDilatedLayerParams,
                      HeadParams, classification_head,
                      classification_head_backward, conv_maker, ddl_dilations,
                      layer_backward, layer_forward)
from ._tensor import (DTYPE, ConvParams, channel_softmax_backward,
                      check_tensor, conv1d_backward, conv1d_forward,
                      conv_size)


class Variant(enum.Enum):
    SSTCN = 'sstcn'
    MSTCN = 'mstcn'
    MSTCN_DDL = 'mstcn-ddl'
    MSTCNPP = 'mstcn++'
    MSTCNPP_SHARED = 'mstcn++sh'

    def __str__(self):
        return self.value


@dataclasses.dataclass
class ModelConfig:
    """
    Architecture of a (multi-stage) temporal convolutional network

    `num_stages` and `layers_per_stage` describe SS-TCN, MS-TCN and MS-TCN with
    dual dilated layers. `layers_generation`, `num_refinements` and
    `layers_refinement` describe both MS-TCN++ variants.

    Dilated residual layers use dilation ``2 ** ((l - 1) % dilation_cycle)``
    at layer index `l`, so stages deeper than `dilation_cycle` layers start
    over at dilation 1.

    :raise ConfigError: if any value is invalid
    """

    variant: Variant
    input_dim: int
    num_classes: int
    filters: int = 64
    num_stages: int = 4
    num_refinements: int = 3
    layers_per_stage: int = 10
    layers_generation: int = 11
    layers_refinement: int = 10
    dropout: float = 0.5
    dilation_cycle: int = 10

    def __post_init__(self):
        try:
            self.variant = Variant(str(self.variant))
        except ValueError:
            choices = ', '.join(str(v) for v in Variant)
            raise ConfigError(f'Unknown variant: {self.variant} (choose from {choices})')
        minimums = {
            'input_dim': 1,
            'num_classes': 2,
            'filters': 1,
            'num_stages': 1,
            'num_refinements': 0,
            'layers_per_stage': 1,
            'layers_generation': 1,
            'layers_refinement': 1,
            'dilation_cycle': 1,
        }
        for name, minimum in minimums.items():
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                raise ConfigError(f'{name} must be an integer: {value!r}')
            elif value < minimum:
                raise ConfigError(f'{name} must be at least {minimum}: {value}')
        if not 0 <= self.dropout < 1:
            raise ConfigError(f'dropout must be in [0, 1): {self.dropout}')
        if self.variant is Variant.SSTCN and self.num_stages != 1:
            self.num_stages = 1

    @property
    def total_stages(self):
        if self.variant in (Variant.MSTCNPP, Variant.MSTCNPP_SHARED):
            return 1 + self.num_refinements
        else:
            return self.num_stages

    def stage_plan(self):
        """
        Return list of ``(name, kind, depth, in_channels)`` tuples, one per
        stage pass

        Passes that share parameters have the same name.
        """
        D_in, C = self.input_dim, self.num_classes
        if self.variant in (Variant.SSTCN, Variant.MSTCN, Variant.MSTCN_DDL):
            kind = 'dual' if self.variant is Variant.MSTCN_DDL else 'residual'
            return [
                (f'stage{s}', kind, self.layers_per_stage, D_in if s == 1 else C)
                for s in range(1, self.num_stages + 1)
            ]
        else:
            plan = [('generation', 'dual', self.layers_generation, D_in)]
            for r in range(1, self.num_refinements + 1):
                name = 'refinement' if self.variant is Variant.MSTCNPP_SHARED else f'refinement{r}'
                plan.append((name, 'residual', self.layers_refinement, C))
            return plan

    def residual_dilation(self, l):
        return 2 ** ((l - 1) % self.dilation_cycle)

    def to_dict(self):
        dct = dataclasses.asdict(self)
        dct['variant'] = str(self.variant)
        return dct

    @classmethod
    def from_dict(cls, dct):
        """Create instance from mapping of field names to (string) values"""
        kwargs = {}
        for field in dataclasses.fields(cls):
            if field.name in dct:
                value = dct[field.name]
                try:
                    if field.type in (int, 'int'):
                        value = int(value)
                    elif field.type in (float, 'float'):
                        value = float(value)
                except ValueError:
                    raise ConfigError(f'Invalid {field.name}: {value!r}')
                kwargs[field.name] = value
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigError(f'Incomplete model configuration: {e}')


@dataclasses.dataclass
class Stage:
    """Parameters of one stage: input projection, layers and head"""

    name: str
    input_conv: ConvParams
    layers: list
    head: HeadParams

    @property
    def size(self):
        return self.input_conv.size + sum(layer.size for layer in self.layers) + self.head.size

    def named_arrays(self):
        arrays = self.input_conv.named_arrays(f'{self.name}.input')
        for i, layer in enumerate(self.layers, start=1):
            arrays.extend(layer.named_arrays(f'{self.name}.layer{i}'))
        arrays.extend(self.head.named_arrays(f'{self.name}.head'))
        return arrays


class Model:
    """
    Instantiated parameters of a :class:`ModelConfig`

    `stages` has one item per stage pass. Passes of shared refinement stages
    reference the same :class:`Stage` object.
    """

    def __init__(self, config, stages):
        self.config = config
        self.stages = list(stages)
        if len(self.stages) != config.total_stages:
            raise DimensionError(f'Expected {config.total_stages} stages, got {len(self.stages)}')

    def __repr__(self):
        return f'<{type(self).__name__} {self.config.variant} {count_parameters(self)} parameters>'

    @property
    def unique_stages(self):
        unique = {}
        for stage in self.stages:
            unique.setdefault(stage.name, stage)
        return list(unique.values())

    def named_parameters(self):
        """
        :class:`dict` that maps parameter names to arrays

        The arrays are the model's own storage, so modifying them in place
        modifies the model. Shared parameters are listed once.
        """
        return {
            name: array
            for stage in self.unique_stages
            for name, array in stage.named_arrays()
        }


@dataclasses.dataclass
class StageOutputs:
    """Per-stage logits and probabilities, each classes x time"""

    logits: typing.List[np.ndarray]
    probs: typing.List[np.ndarray]

    def __len__(self):
        return len(self.probs)

    @property
    def final_logits(self):
        return self.logits[-1]

    @property
    def final_probs(self):
        return self.probs[-1]


def _build_stage(config, name, kind, depth, in_channels, rng, dtype):
    D = config.filters
    make = conv_maker(rng, dtype)
    input_conv = make(1, in_channels, D, 1)
    layers = []
    for l in range(1, depth + 1):
        if kind == 'dual':
            layers.append(DualDilatedLayerParams.create(D, l, depth, config.dropout, rng=rng, dtype=dtype))
        else:
            layers.append(DilatedResidualLayerParams.create(
                D, config.residual_dilation(l), config.dropout, rng=rng, dtype=dtype))
    head = HeadParams.create(D, config.num_classes, rng=rng, dtype=dtype)
    return Stage(name=name, input_conv=input_conv, layers=layers, head=head)


def build_model(config, rng=None, dtype=DTYPE, zeros=False):
    """
    Instantiate `config`

    :param rng: :class:`numpy.random.Generator` or seed
    :param dtype: Floating point type of all parameters
    :param zeros: Whether all parameters are zero instead of random

    All weights and biases are drawn uniformly from ``[-b, b]`` with
    ``b = 1 / sqrt(kernel * in_channels)`` in stage and layer order.
    """
    if zeros:
        rng = None
    elif not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)

    stages = {}
    passes = []
    for name, kind, depth, in_channels in config.stage_plan():
        if name not in stages:
            stages[name] = _build_stage(config, name, kind, depth, in_channels, rng, dtype)
        passes.append(stages[name])
    model = Model(config, passes)
    _debug('Built %r', model)
    return model


def copy_shared_into_unshared(model):
    """
    Return MS-TCN++ model with independent copies of the shared refinement
    parameters of `model` in every refinement stage
    """
    if model.config.variant is not Variant.MSTCNPP_SHARED:
        raise ConfigError(f'Expected {Variant.MSTCNPP_SHARED} model, got {model.config.variant}')
    config = dataclasses.replace(model.config, variant=Variant.MSTCNPP)
    stages = [copy.deepcopy(model.stages[0])]
    for r, stage in enumerate(model.stages[1:], start=1):
        stages.append(dataclasses.replace(copy.deepcopy(stage), name=f'refinement{r}'))
    return Model(config, stages)


def _stage_forward(x, stage, training, rng, cache):
    h = conv1d_forward(x, stage.input_conv)
    layer_caches = []
    for layer in stage.layers:
        layer_cache = {} if cache is not None else None
        h = layer_forward(h, layer, training=training, rng=rng, cache=layer_cache)
        layer_caches.append(layer_cache)
    logits, probs = classification_head(h, stage.head)
    if cache is not None:
        cache.update(input=x, layers=layer_caches, head_input=h, probs=probs)
    return logits, probs


def _stage_backward(stage, cache, grad_logits):
    grad_h, head_grads = classification_head_backward(cache['head_input'], stage.head, grad_logits)
    layer_grads = []
    for layer, layer_cache in zip(reversed(stage.layers), reversed(cache['layers'])):
        grad_h, grads = layer_backward(grad_h, layer, layer_cache)
        layer_grads.insert(0, grads)
    grad_x, gw, gb = conv1d_backward(cache['input'], stage.input_conv, grad_h)
    grads = Stage(name=stage.name, input_conv=ConvParams(gw, gb, 1), layers=layer_grads, head=head_grads)
    return grad_x, grads


def forward(model, features, training=False, rng=None, caches=None):
    """
    Run all stages on `features`

    The first stage consumes `features`; every later stage consumes the
    probabilities of the stage before it and nothing else.

    :param features: input_dim x time tensor
    :param training: Whether dropout is active
    :param rng: Random number generator for dropout
    :param caches: If this is a :class:`list`, one cache per stage is
        appended for :func:`backward`

    :raise DimensionError: if `features` doesn't fit the model
    """
    check_tensor(features, channels=model.config.input_dim, name='features')
    x = features
    logits_list, probs_list = [], []
    for stage in model.stages:
        cache = {} if caches is not None else None
        logits, probs = _stage_forward(x, stage, training, rng, cache)
        if caches is not None:
            caches.append(cache)
        logits_list.append(logits)
        probs_list.append(probs)
        x = probs
    return StageOutputs(logits=logits_list, probs=probs_list)


def backward(model, caches, grad_logits):
    """
    Gradients of all parameters

    :param caches: Caches filled by :func:`forward`
    :param grad_logits: Gradient of the loss w.r.t. each stage's logits

    Gradients that reach a stage's input are routed through the previous
    stage's softmax. Gradients of shared parameters are summed over all
    passes.

    :return: :class:`dict` with the same keys as
        :meth:`Model.named_parameters`
    """
    if len(grad_logits) != len(model.stages) or len(caches) != len(model.stages):
        raise DimensionError(f'Expected {len(model.stages)} caches and gradients, '
                             f'got {len(caches)} and {len(grad_logits)}')
    grads = {}
    grad_input = None
    for stage, cache, grad in reversed(list(zip(model.stages, caches, grad_logits))):
        if grad_input is not None:
            grad = grad + channel_softmax_backward(cache['probs'], grad_input)
        grad_input, stage_grads = _stage_backward(stage, cache, grad)
        for name, array in stage_grads.named_arrays():
            if name in grads:
                grads[name] = grads[name] + array
            else:
                grads[name] = array
    return {name: grads[name] for name in model.named_parameters()}


def predict_labels(model, features):
    """
    Frame-wise class indices of the final stage

    Ties go to the lowest class index.
    """
    return np.argmax(forward(model, features).final_probs, axis=0)


def count_parameters(model):
    """Number of scalar weights and biases; shared parameters count once"""
    return sum(array.size for array in model.named_parameters().values())


@dataclasses.dataclass
class ReportRow:
    stage: str
    layer: int
    kind: str
    dilations: tuple
    receptive_field: int
    cumulative_parameters: int


@dataclasses.dataclass
class ArchitectureReport:
    """Per-layer description of a :class:`ModelConfig`"""

    config: ModelConfig
    rows: typing.List[ReportRow]
    stage_parameters: typing.Dict[str, int]

    @property
    def parameters(self):
        return sum(self.stage_parameters.values())

    def to_kv(self):
        """Mapping for :func:`~._config.format_kv`"""
        kv = {
            'variant': str(self.config.variant),
            'input_dim': self.config.input_dim,
            'num_classes': self.config.num_classes,
            'filters': self.config.filters,
            'stages': self.config.total_stages,
            'parameters': self.parameters,
        }
        for name, count in self.stage_parameters.items():
            kv[f'{name}.parameters'] = count
        seen = set()
        for row in self.rows:
            key = f'{row.stage}.layer{row.layer}'
            if key not in seen:
                seen.add(key)
                kv[f'{key}.kind'] = row.kind
                kv[f'{key}.dilation'] = row.dilations
                kv[f'{key}.receptive_field'] = row.receptive_field
        return kv

    def to_table(self):
        lines = [
            f'{"stage":<12} {"layer":>5} {"kind":<9} {"dilation":<12} {"receptive":>9} {"parameters":>11}',
        ]
        for row in self.rows:
            dilations = ','.join(str(d) for d in row.dilations)
            lines.append(f'{row.stage:<12} {row.layer:>5} {row.kind:<9} {dilations:<12} '
                         f'{row.receptive_field:>9} {row.cumulative_parameters:>11,}')
        lines.append(f'Parameters: {self.parameters:,}')
        return '\n'.join(lines) + '\n'


def architecture_report(config):
    """
    Describe every layer of every stage pass of `config` without building it

    The receptive field column is the number of input frames one output frame
    of a layer can see within its stage.
    """
    D, C = config.filters, config.num_classes
    rows = []
    stage_parameters = {}
    cumulative = 0
    for name, kind, depth, in_channels in config.stage_plan():
        shared = name in stage_parameters
        size = conv_size(1, in_channels, D)
        if not shared:
            cumulative += conv_size(1, in_channels, D)
        rf = 1
        for l in range(1, depth + 1):
            if kind == 'dual':
                dilations = ddl_dilations(l, depth)
                layer_size = 2 * conv_size(3, D, D) + conv_size(1, 2 * D, D)
            else:
                dilations = (config.residual_dilation(l),)
                layer_size = conv_size(3, D, D) + conv_size(1, D, D)
            rf += 2 * max(dilations)
            size += layer_size
            if not shared:
                cumulative += layer_size
            rows.append(ReportRow(stage=name, layer=l, kind=kind, dilations=dilations,
                                  receptive_field=rf, cumulative_parameters=cumulative))
        size += conv_size(1, D, C)
        if not shared:
            cumulative += conv_size(1, D, C)
            stage_parameters[name] = size
    return ArchitectureReport(config=config, rows=rows, stage_parameters=stage_parameters)
