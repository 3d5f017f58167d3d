import pytest

from tempseg import _config, _errors


def test_Defaults_filepath(mocker):
    mocker.patch('tempseg._config.Defaults._read', return_value={})
    defaults = _config.Defaults(filepath='path/to/defaults')
    assert defaults.filepath == 'path/to/defaults'


def test_Defaults_repr(mocker):
    mocker.patch('tempseg._config.Defaults._read', return_value={'epochs': 10})
    defaults = _config.Defaults(filepath='path/to/defaults')
    assert repr(defaults) == "<Defaults 'path/to/defaults' {'epochs': 10}>"


def test_Defaults_is_mapping(mocker):
    mocker.patch('tempseg._config.Defaults._read', return_value={'epochs': 10, 'lr': 0.01})
    defaults = _config.Defaults(filepath='path/to/defaults')
    assert dict(defaults) == {'epochs': 10, 'lr': 0.01}
    assert len(defaults) == 2
    assert defaults['lr'] == 0.01
    assert 'seed' not in defaults


def test_Defaults_read_reads_filepath(tmp_path):
    filepath = tmp_path / 'defaults'
    filepath.write_text('''
    # A comment
    arch = mstcn++
    layers-gen=13

       # Another comment
      lambda = 0.2
    shuffle = no
    dropout = 0.25
    '''.strip())
    defaults = _config.Defaults(filepath=filepath)
    assert dict(defaults) == {
        'arch': 'mstcn++',
        'layers_gen': 13,
        'lambda_': 0.2,
        'shuffle': False,
        'dropout': 0.25,
    }


def test_Defaults_read_uses_last_value(tmp_path):
    filepath = tmp_path / 'defaults'
    filepath.write_text('epochs = 10\nepochs = 20\n')
    assert _config.Defaults(filepath=filepath)['epochs'] == 20


@pytest.mark.parametrize(
    argnames='line, exp_message',
    argvalues=(
        ('epochs 10', 'Expected "<option> = <value>": epochs 10'),
        ('= 10', 'Expected "<option> = <value>": = 10'),
        ('batch-size = 8', 'Unknown option: batch-size'),
        ('epochs = ten', 'Invalid value for epochs: ten'),
        ('lr = fast', 'Invalid value for lr: fast'),
        ('shuffle = maybe', 'Invalid value for shuffle: maybe'),
    ),
)
def test_Defaults_read_rejects_line(line, exp_message, tmp_path):
    filepath = tmp_path / 'defaults'
    filepath.write_text(f'# Comment\n{line}\n')
    with pytest.raises(_errors.ConfigError, match=rf'^{filepath}@2: {exp_message}$'):
        _config.Defaults(filepath=filepath)


def test_Defaults_read_handles_nonexisting_default_file(mocker):
    mocker.patch('tempseg._config.DEFAULT_CONFIG_FILEPATH', 'mock/default/config/file')
    defaults = _config.Defaults(filepath=_config.DEFAULT_CONFIG_FILEPATH)
    assert dict(defaults) == {}


def test_Defaults_read_handles_nonexisting_custom_file():
    filepath = 'mock/custom/config/file'
    assert filepath != _config.DEFAULT_CONFIG_FILEPATH
    with pytest.raises(_errors.ConfigError, match=rf'^Failed to read {filepath}: No such file or directory$'):
        _config.Defaults(filepath=filepath)


def test_Defaults_read_handles_directory(tmp_path):
    with pytest.raises(_errors.ConfigError, match=rf'^Failed to read {tmp_path}: Is a directory$'):
        _config.Defaults(filepath=tmp_path)


@pytest.mark.parametrize(
    argnames='option, exp_dest',
    argvalues=(
        ('epochs', 'epochs'),
        ('layers-gen', 'layers_gen'),
        ('dilation-cycle', 'dilation_cycle'),
        ('lambda', 'lambda_'),
    ),
)
def test_Defaults_dest(option, exp_dest):
    assert _config.Defaults.dest(option) == exp_dest


def test_format_kv():
    text = _config.format_kv({
        'name': 'mstcn',
        'count': 3,
        'rate': 0.1,
        'flag': True,
        'empty': None,
        'sizes': (600, 900),
    })
    assert text == (
        'name=mstcn\n'
        'count=3\n'
        'rate=0.1\n'
        'flag=true\n'
        'empty=\n'
        'sizes=600,900\n'
    )


def test_format_kv_preserves_floats():
    value = 1 / 3
    assert float(_config.parse_kv(_config.format_kv({'x': value}))['x']) == value


@pytest.mark.parametrize(
    argnames='mapping, exp_message',
    argvalues=(
        ({'a=b': 1}, "Invalid key: 'a=b'"),
        ({'': 1}, "Invalid key: ''"),
        ({'a': 'x\ny'}, "Invalid value for a: 'x\\ny'"),
    ),
)
def test_format_kv_rejects(mapping, exp_message):
    with pytest.raises(ValueError) as exc_info:
        _config.format_kv(mapping)
    assert str(exc_info.value) == exp_message


def test_parse_kv():
    assert _config.parse_kv('a=1\n\nb=x=y\nc=\n') == {'a': '1', 'b': 'x=y', 'c': ''}


def test_parse_kv_rejects_line():
    with pytest.raises(_errors.ConfigError, match=r'^path/to/doc@2: Expected "key=value": oops$'):
        _config.parse_kv('a=1\noops\n', filepath='path/to/doc')
