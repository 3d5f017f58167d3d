import collections
import errno
import os

from xdg.BaseDirectory import xdg_config_home

from . import __project_name__, _errors

DEFAULT_CONFIG_FILEPATH = os.path.join(xdg_config_home, __project_name__, 'defaults')


def _boolean(value):
    if value.lower() in ('1', 'yes', 'true', 'on'):
        return True
    elif value.lower() in ('0', 'no', 'false', 'off'):
        return False
    else:
        raise ValueError(f'Invalid boolean: {value}')


class Defaults(collections.abc.Mapping):
    """
    Read-only mapping of command line defaults from `filepath`

    Each line is ``<option> = <value>`` where ``<option>`` is a long command
    line option without the leading dashes (e.g. ``layers-gen = 11``). Lines
    that start with "#" are ignored.

    Keys of the mapping are :mod:`argparse` destinations (e.g. ``layers_gen``)
    and values are converted to the option's type.

    :raise ConfigError: if reading `filepath` fails or if it contains an
        unknown option or an invalid value
    """

    types = {
        'arch': str,
        'stages': int,
        'layers': int,
        'layers-gen': int,
        'layers-ref': int,
        'filters': int,
        'dropout': float,
        'dilation-cycle': int,
        'epochs': int,
        'lr': float,
        'lambda': float,
        'tau': float,
        'smoothing': str,
        'shuffle': _boolean,
        'seed': int,
        'jobs': int,
        'format': str,
        'background': str,
    }

    def __init__(self, *, filepath):
        self._filepath = str(filepath)
        self._dict = self._read(self._filepath)

    @property
    def filepath(self):
        return self._filepath

    def __repr__(self):
        return f'<{type(self).__name__} {self._filepath!r} {self._dict!r}>'

    @staticmethod
    def dest(option):
        """Return :mod:`argparse` destination for long `option` name"""
        dest = option.replace('-', '_')
        return 'lambda_' if dest == 'lambda' else dest

    def _read(self, filepath):
        defaults = {}
        try:
            with open(filepath, 'r') as f:
                for line_number, line in enumerate(f.readlines(), start=1):
                    line = line.strip()
                    if line and not line.startswith('#'):
                        option, value = self._parse_line(line, filepath, line_number)
                        defaults[self.dest(option)] = value
        except OSError as e:
            # Ignore missing default config file path
            if e.errno == errno.ENOENT and filepath == DEFAULT_CONFIG_FILEPATH:
                pass
            else:
                msg = e.strerror if e.strerror else str(e)
                raise _errors.ConfigError(f'Failed to read {filepath}: {msg}')
        return defaults

    def _parse_line(self, line, filepath, line_number):
        option, sep, value = line.partition('=')
        option, value = option.strip(), value.strip()
        if not sep or not option:
            raise _errors.ConfigError(f'Expected "<option> = <value>": {line}',
                                      filepath=filepath, line_number=line_number)
        elif option not in self.types:
            raise _errors.ConfigError(f'Unknown option: {option}',
                                      filepath=filepath, line_number=line_number)
        try:
            return option, self.types[option](value)
        except ValueError:
            raise _errors.ConfigError(f'Invalid value for {option}: {value}',
                                      filepath=filepath, line_number=line_number)

    def __getitem__(self, key):
        return self._dict[key]

    def __iter__(self):
        return iter(self._dict)

    def __len__(self):
        return len(self._dict)


def format_kv(mapping):
    """
    Return flat key/value document

    Each item of `mapping` becomes one ``key=value`` line. Floats are written
    with :func:`repr` so they survive :func:`parse_kv` unchanged.
    """
    lines = []
    for key, value in mapping.items():
        key = str(key)
        if not key or '=' in key or '\n' in key:
            raise ValueError(f'Invalid key: {key!r}')
        if isinstance(value, bool):
            value = 'true' if value else 'false'
        elif isinstance(value, float):
            value = repr(value)
        elif isinstance(value, (list, tuple)):
            value = ','.join(str(v) for v in value)
        elif value is None:
            value = ''
        value = str(value)
        if '\n' in value:
            raise ValueError(f'Invalid value for {key}: {value!r}')
        lines.append(f'{key}={value}\n')
    return ''.join(lines)


def parse_kv(text, filepath=None):
    """
    Parse flat key/value document into :class:`dict` of strings

    :raise ConfigError: if a line is not a ``key=value`` pair
    """
    mapping = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, value = line.partition('=')
        if not sep or not key:
            raise _errors.ConfigError(f'Expected "key=value": {line}',
                                      filepath=filepath, line_number=line_number)
        mapping[key] = value
    return mapping
