import argparse
import datetime
import logging
import sys

import numpy as np

from . import (__description__, __project_name__, __version__, _config,
               _data, _errors, _gradcheck, _metrics, _model, _trainer)
from ._loss import LossConfig, Smoothing

_FORMATS = ('table', 'kv')


class _ArgumentParser(argparse.ArgumentParser):
    # Exit code 2 is reserved for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f'{self.prog}: error: {message}\n')


def _integers(value):
    try:
        return [int(v) for v in value.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'Invalid comma-separated integers: {value}')


def _names(value):
    return [name.strip() for name in (value or '').split(',') if name.strip()]


def _add_format_argument(parser):
    parser.add_argument(
        '--format',
        default='table',
        help=f'Output format ({" or ".join(_FORMATS)}, default: %(default)s)',
    )


def _add_model_arguments(parser):
    parser.add_argument(
        '--arch',
        default=str(_model.Variant.MSTCN),
        help=f'Architecture ({", ".join(str(v) for v in _model.Variant)}, default: %(default)s)',
    )
    parser.add_argument(
        '--stages',
        type=int,
        default=4,
        help='Number of stages including the first (default: %(default)s)',
    )
    parser.add_argument(
        '--layers',
        type=int,
        default=10,
        help='Layers per stage of sstcn, mstcn and mstcn-ddl (default: %(default)s)',
    )
    parser.add_argument(
        '--layers-gen',
        type=int,
        default=11,
        help='Dual dilated layers in the mstcn++ generation stage (default: %(default)s)',
    )
    parser.add_argument(
        '--layers-ref',
        type=int,
        default=10,
        help='Layers per mstcn++ refinement stage (default: %(default)s)',
    )
    parser.add_argument(
        '--filters',
        type=int,
        default=64,
        help='Feature maps per layer (default: %(default)s)',
    )
    parser.add_argument(
        '--dropout',
        type=float,
        default=0.5,
        help='Dropout rate inside every layer (default: %(default)s)',
    )
    parser.add_argument(
        '--dilation-cycle',
        type=int,
        default=10,
        help='Number of layers after which dilation starts over at 1 (default: %(default)s)',
    )


def _add_subcommands(argparser):
    subparsers = argparser.add_subparsers(
        dest='command',
        required=True,
        metavar='COMMAND',
    )

    generate = subparsers.add_parser('generate', help='Write synthetic dataset')
    generate.add_argument('--out', required=True, help='Dataset directory')
    generate.add_argument('--videos', type=int, default=38, help='Number of videos (default: %(default)s)')
    generate.add_argument('--classes', type=int, default=8, help='Number of classes (default: %(default)s)')
    generate.add_argument('--dim', type=int, default=32, help='Feature dimensions (default: %(default)s)')
    generate.add_argument('--min-seg', type=int, default=30, help='Shortest segment in frames (default: %(default)s)')
    generate.add_argument('--max-seg', type=int, default=120, help='Longest segment in frames (default: %(default)s)')
    generate.add_argument('--mean-segments', type=float, default=13.0,
                          help='Mean number of segments per video (default: %(default)s)')
    generate.add_argument('--noise', type=float, default=0.6,
                          help='Standard deviation of feature noise (default: %(default)s)')
    generate.add_argument('--prototype-norm', type=float, default=0.5,
                          help='Length of class prototype vectors (default: %(default)s)')
    generate.add_argument('--test-fraction', type=float, default=0.2,
                          help='Fraction of videos in the test split (default: %(default)s)')
    generate.add_argument('--seed', type=int, default=1, help='Random seed (default: %(default)s)')
    generate.add_argument('--no-timestamp', action='store_true', help='Omit creation time from manifest')
    _add_format_argument(generate)

    train = subparsers.add_parser('train', help='Train model and write checkpoint')
    train.add_argument('--data', required=True, help='Dataset directory')
    train.add_argument('--split', default='train', help='Training split (default: %(default)s)')
    train.add_argument('--eval-split', help='Split that is evaluated after every epoch')
    train.add_argument('--out', required=True, help='Checkpoint file')
    _add_model_arguments(train)
    train.add_argument('--epochs', type=int, default=50, help='Number of epochs (default: %(default)s)')
    train.add_argument('--lr', type=float, default=0.0005, help='Adam learning rate (default: %(default)s)')
    train.add_argument('--lambda', dest='lambda_', type=float, default=0.15,
                       help='Weight of the smoothing loss (default: %(default)s)')
    train.add_argument('--tau', type=float, default=4.0,
                       help='Truncation threshold of the smoothing loss (default: %(default)s)')
    train.add_argument('--smoothing', default=str(Smoothing.TMSE),
                       help=f'Smoothing loss ({", ".join(str(s) for s in Smoothing)}, default: %(default)s)')
    train.add_argument('--seed', type=int, default=0, help='Random seed (default: %(default)s)')
    train.add_argument('--no-shuffle', dest='shuffle', action='store_false',
                       help='Train on videos in split order')
    train.add_argument('--downsample', type=int, default=1,
                       help='Keep every n-th frame (default: %(default)s)')
    train.add_argument('--no-timestamp', action='store_true', help='Omit creation time from checkpoint')
    _add_format_argument(train)

    eval_ = subparsers.add_parser('eval', help='Evaluate checkpoint on dataset split')
    eval_.add_argument('--data', required=True, help='Dataset directory')
    eval_.add_argument('--split', default='test', help='Evaluated split (default: %(default)s)')
    eval_.add_argument('--ckpt', required=True, help='Checkpoint file')
    eval_.add_argument('--background', default='',
                       help='Comma-separated class names ignored by segment metrics')
    eval_.add_argument('--jobs', type=int, default=1, help='Videos predicted in parallel (default: %(default)s)')
    eval_.add_argument('--duration-groups', type=_integers,
                       help='Comma-separated frame counts that separate video length groups')
    eval_.add_argument('--timeline', action='store_true',
                       help='Show predicted and ground truth segments of every video')
    eval_.add_argument('--downsample', type=int, default=1,
                       help='Keep every n-th frame (default: %(default)s)')
    _add_format_argument(eval_)

    predict = subparsers.add_parser('predict', help='Write class name of every frame')
    predict.add_argument('--features', required=True, help='Feature file')
    predict.add_argument('--ckpt', required=True, help='Checkpoint file')
    predict.add_argument('--mapping', required=True, help='Class mapping file')
    predict.add_argument('--out', help='Output file (default: stdout)')

    inspect = subparsers.add_parser('inspect', help='Show architecture and parameter count')
    _add_model_arguments(inspect)
    inspect.add_argument('--input-dim', type=int, default=2048,
                         help='Feature dimensions (default: %(default)s)')
    inspect.add_argument('--classes', type=int, default=19, help='Number of classes (default: %(default)s)')
    _add_format_argument(inspect)

    gradcheck = subparsers.add_parser('gradcheck', help='Compare analytic and numeric gradients')
    gradcheck.add_argument('--seed', type=int, default=0, help='First random seed (default: %(default)s)')
    gradcheck.add_argument('--seeds', type=int, default=1,
                           help='Number of consecutive seeds per primitive (default: %(default)s)')
    precision = gradcheck.add_mutually_exclusive_group()
    precision.add_argument('--double', dest='double', action='store_true', default=True,
                           help='Check in float64 (default)')
    precision.add_argument('--single', dest='double', action='store_false',
                           help='Coarse check in float32')
    gradcheck.add_argument(
        '--primitive',
        action='append',
        choices=_gradcheck.PRIMITIVES,
        help='Only check this primitive (may be given multiple times)',
    )
    _add_format_argument(gradcheck)

    return subparsers


def _parse_args(args):
    # --config must be known before defaults can be applied
    preparser = _ArgumentParser(prog=__project_name__, add_help=False)
    preparser.add_argument('--config')
    known, _ = preparser.parse_known_args(args)
    defaults = _config.Defaults(filepath=known.config or _config.DEFAULT_CONFIG_FILEPATH)

    argparser = _ArgumentParser(
        prog=__project_name__,
        description=__description__,
    )
    argparser.add_argument(
        '--config',
        default=defaults.filepath,
        help='File containing "option = value" lines that change defaults (default: %(default)s)',
    )
    argparser.add_argument(
        '--verbose', '-v',
        action='store_true',
        help='Show progress on stderr',
    )
    argparser.add_argument(
        '--version',
        action='version',
        version=f'{__project_name__} {__version__}',
    )
    argparser.add_argument(
        '--debug-file',
        help='Where to write debugging messages',
    )
    subparsers = _add_subcommands(argparser)
    for subparser in subparsers.choices.values():
        known_dests = {action.dest for action in subparser._actions}
        subparser.set_defaults(**{dest: value for dest, value in defaults.items() if dest in known_dests})
    return argparser.parse_args(args)


def _check_format(fmt):
    if fmt not in _FORMATS:
        raise _errors.ConfigError(f'Unknown format: {fmt} (choose from {", ".join(_FORMATS)})')
    return fmt


def _write_mapping(mapping, fmt):
    if fmt == 'kv':
        sys.stdout.write(_config.format_kv(mapping))
    else:
        width = max(len(str(key)) for key in mapping)
        for key, value in mapping.items():
            if isinstance(value, float):
                value = f'{value:.2f}'
            sys.stdout.write(f'{key:<{width}}  {value}\n')


def _timestamp():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _model_config(args, input_dim, num_classes):
    return _model.ModelConfig(
        variant=args.arch,
        input_dim=input_dim,
        num_classes=num_classes,
        filters=args.filters,
        num_stages=args.stages,
        num_refinements=max(0, args.stages - 1),
        layers_per_stage=args.layers,
        layers_generation=args.layers_gen,
        layers_refinement=args.layers_ref,
        dropout=args.dropout,
        dilation_cycle=args.dilation_cycle,
    )


def _generate(args):
    fmt = _check_format(args.format)
    spec = _data.SyntheticSpec(
        num_videos=args.videos,
        num_classes=args.classes,
        feature_dim=args.dim,
        min_segment=args.min_seg,
        max_segment=args.max_seg,
        mean_segments=args.mean_segments,
        noise=args.noise,
        prototype_norm=args.prototype_norm,
        test_fraction=args.test_fraction,
        seed=args.seed,
    )
    bundle = _data.generate_synthetic(spec)
    if not args.no_timestamp:
        bundle.manifest['created'] = _timestamp()
    _data.save_dataset(args.out, bundle)
    _write_mapping({
        'videos': len(bundle.samples),
        'frames': sum(sample.num_frames for sample in bundle.samples),
        'classes': bundle.num_classes,
        'train': len(bundle.splits['train']),
        'test': len(bundle.splits['test']),
        'bayes_proxy_accuracy': bundle.manifest['bayes_proxy_accuracy'],
    }, fmt)


def _train(args):
    fmt = _check_format(args.format)
    splits = [args.split] if args.eval_split in (None, args.split) else [args.split, args.eval_split]
    bundle = _data.load_dataset(args.data, split=splits)
    if args.downsample != 1:
        bundle = _data.downsample_bundle(bundle, args.downsample)
    config = _model_config(args, input_dim=bundle.feature_dim, num_classes=bundle.num_classes)
    cfg = _trainer.TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        loss=LossConfig(lambda_=args.lambda_, tau=args.tau, smoothing=args.smoothing),
        seed=args.seed,
        shuffle=args.shuffle,
    )
    model = _model.build_model(config, _trainer.init_generator(args.seed))

    def on_epoch_end(record):
        if fmt == 'table':
            line = f'epoch {record.epoch:>4}  loss {record.loss:.6f}  acc {record.accuracy:6.2f}'
            if record.report is not None:
                line += (f'  F1@{{10,25,50}} {record.report.f1_10:.2f} {record.report.f1_25:.2f} '
                         f'{record.report.f1_50:.2f}  edit {record.report.edit:.2f}')
            sys.stdout.write(f'{line}\n')

    history, state = _trainer.fit(model, bundle, args.split, cfg,
                                  eval_split=args.eval_split, on_epoch_end=on_epoch_end)
    _trainer.save_checkpoint(args.out, model, state=state, seed=args.seed,
                             epoch=cfg.epochs, timestamp=not args.no_timestamp)
    if fmt == 'kv':
        final = history[-1]
        summary = {'epochs': final.epoch, 'loss': final.loss, 'accuracy': final.accuracy}
        if final.report is not None:
            summary.update({f'eval.{key}': value for key, value in final.report.to_kv().items()})
        _write_mapping(summary, fmt)


def _write_report(report, fmt, prefix=''):
    if fmt == 'kv':
        sys.stdout.write(_config.format_kv({f'{prefix}{key}': value for key, value in report.to_kv().items()}))
    else:
        sys.stdout.write(report.to_table())


def _eval(args):
    fmt = _check_format(args.format)
    if args.jobs < 1:
        raise _errors.ConfigError(f'Number of jobs must be at least 1: {args.jobs}')
    model, _, _ = _trainer.load_checkpoint(args.ckpt)
    bundle = _data.load_dataset(args.data, split=args.split)
    if args.downsample != 1:
        bundle = _data.downsample_bundle(bundle, args.downsample)
    background = bundle.class_indexes(_names(args.background))
    pairs = _trainer.predict_split(model, bundle, args.split, jobs=args.jobs)

    _write_report(_metrics.evaluate_set(pairs, background), fmt)

    if args.duration_groups:
        for name, report in _metrics.evaluate_by_duration(pairs, args.duration_groups, background):
            if fmt == 'kv':
                _write_report(report, fmt, prefix=f'{name}.')
            else:
                sys.stdout.write(f'\nVideos with {name} frames\n')
                _write_report(report, fmt)

    if args.timeline:
        sys.stdout.write('\n')
        sys.stdout.write(' '.join(f'{_metrics.segment_timeline([i])}={name}'
                                  for i, name in enumerate(bundle.classes)) + '\n')
        for sample, (pred, gt) in zip(bundle.split(args.split), pairs):
            sys.stdout.write(f'{sample.id}\n'
                             f'  pred {_metrics.segment_timeline(pred)}\n'
                             f'  gt   {_metrics.segment_timeline(gt)}\n')


def _predict(args):
    model, _, _ = _trainer.load_checkpoint(args.ckpt)
    classes = _data.load_mapping(args.mapping)
    if len(classes) != model.config.num_classes:
        raise _errors.CheckpointError(f'Model has {model.config.num_classes} classes, '
                                      f'mapping has {len(classes)}', filepath=args.mapping)
    features = _data.load_features(args.features)
    if features.shape[0] != model.config.input_dim:
        raise _errors.CheckpointError(f'Model expects {model.config.input_dim} feature dimensions, '
                                      f'features have {features.shape[0]}', filepath=args.features)
    text = ''.join(f'{classes[label]}\n' for label in _model.predict_labels(model, features))
    if args.out:
        try:
            with open(args.out, 'w', encoding='utf-8') as f:
                f.write(text)
        except OSError as e:
            msg = e.strerror if e.strerror else str(e)
            raise _errors.DataError(f'Failed to write predictions: {msg}', filepath=args.out)
    else:
        sys.stdout.write(text)


def _inspect(args):
    fmt = _check_format(args.format)
    config = _model_config(args, input_dim=args.input_dim, num_classes=args.classes)
    report = _model.architecture_report(config)
    if fmt == 'kv':
        sys.stdout.write(_config.format_kv(report.to_kv()))
    else:
        sys.stdout.write(report.to_table())


def _gradcheck_command(args):
    fmt = _check_format(args.format)
    if args.seeds < 1:
        raise _errors.ConfigError(f'Number of seeds must be at least 1: {args.seeds}')
    dtype = np.float64 if args.double else np.float32
    epsilon = _gradcheck.DEFAULT_EPSILON if args.double else _gradcheck.SINGLE_EPSILON
    results = {}
    for primitive in (args.primitive or _gradcheck.PRIMITIVES):
        errors = [
            _gradcheck.finite_difference_check(primitive, seed=seed, epsilon=epsilon, dtype=dtype)
            for seed in range(args.seed, args.seed + args.seeds)
        ]
        results[primitive] = (max(errors), _gradcheck.threshold(primitive, dtype))

    failed = [primitive for primitive, (error, threshold) in results.items() if not error < threshold]
    passed = not failed
    if fmt == 'kv':
        kv = {}
        for primitive, (error, threshold) in results.items():
            kv[f'{primitive}.max_relative_error'] = error
            kv[f'{primitive}.threshold'] = threshold
            kv[f'{primitive}.passed'] = error < threshold
        kv['passed'] = passed
        sys.stdout.write(_config.format_kv(kv))
    else:
        sys.stdout.write(f'{"primitive":<22} {"max rel. error":>14} {"threshold":>10}\n')
        for primitive, (error, threshold) in results.items():
            status = 'ok' if error < threshold else 'FAILED'
            sys.stdout.write(f'{primitive:<22} {error:>14.3e} {threshold:>10.0e}  {status}\n')
    if not passed:
        raise _errors.GradientCheckError(f'Gradient check failed: {", ".join(failed)}')


_COMMANDS = {
    'generate': _generate,
    'train': _train,
    'eval': _eval,
    'predict': _predict,
    'inspect': _inspect,
    'gradcheck': _gradcheck_command,
}


def _fatal_error(msg, exit_code):
    sys.stderr.write(f'{msg}\n')
    return exit_code


def cli(args=None):
    if args is None:
        args = sys.argv[1:]
    try:
        args = _parse_args(args)
    except _errors.ConfigError as e:
        return _fatal_error(e, 1)
    except SystemExit as e:
        return e.code

    # Debugging
    if args.debug_file:
        logging.basicConfig(filename=args.debug_file, level=logging.DEBUG)

    # Progress
    logger = logging.getLogger(__project_name__)
    handler = None
    level = logger.level
    if args.verbose:
        handler = logging.StreamHandler(sys.stderr)
        handler.setLevel(logging.INFO)
        handler.setFormatter(logging.Formatter('%(message)s'))
        logger.addHandler(handler)
        if logger.getEffectiveLevel() > logging.INFO:
            logger.setLevel(logging.INFO)

    try:
        _COMMANDS[args.command](args)
    except (_errors.ConfigError, _errors.DomainError) as e:
        return _fatal_error(e, 1)
    except _errors.DataError as e:
        return _fatal_error(e, 2)
    except (_errors.DivergenceError, _errors.GradientCheckError, _errors.DimensionError) as e:
        return _fatal_error(e, 3)
    finally:
        if handler is not None:
            logger.removeHandler(handler)
            logger.setLevel(level)
    return 0
