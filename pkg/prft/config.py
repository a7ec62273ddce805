"""
Flat `key = value` scenario files. One scenario per file; a directory of files is a suite.

    # comments start with '#'
    name = pipc-demo
    n = 10
    rational_strategy = PiPC
    censored = tx-0
    seeds = 0, 1, 2
    partition = 0:100 | 0,1,2 | 3,4
    theta.6 = 3
"""
import logging
from pathlib import Path

from prft.core import ConfigError
from prft.harness import ScenarioConfig

logger = logging.getLogger(__name__)

INT_KEYS = {'n', 't0', 't', 'k', 'theta', 'n_txs', 'tx_size', 'block_size', 'net_bound', 'gst', 'pre_gst_ceiling',
            'pre_gst_delay', 'delta', 'rounds', 'time_limit', 'kappa', 'cr_window'}
FLOAT_KEYS = {'async_mean', 'alpha', 'L', 'discount'}
BOOL_KEYS = {'strict_step5'}
INT_LIST_KEYS = {'byzantine', 'rational', 'collusion', 'partition_a', 'partition_b', 'seeds'}
STR_LIST_KEYS = {'censored', 'strategy_phases', 'expect_fail'}
STR_KEYS = {'name', 'byzantine_strategy', 'rational_strategy', 'delay_model'}


def _int_list(value):
    out = []
    for item in value.split(','):
        item = item.strip()
        if not item:
            continue
        if '..' in item:
            lo, hi = item.split('..')
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(item))
    return tuple(out)


def _partition(value):
    """ 'start:end | 0,1,2 | 3,4' -> (start, end, ((0, 1, 2), (3, 4))) """
    span, *groups = [part.strip() for part in value.split('|')]
    start, end = (int(x) for x in span.split(':'))
    return start, end, tuple(_int_list(g) for g in groups)


def parse_config(text, source='<string>'):
    """
    Parse scenario text into ScenarioConfig keyword arguments.

    Raises:
        ConfigError: listing every malformed line
    """
    params = {}
    strategies = []
    thetas = []
    partitions = []
    violations = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            violations.append(f'{source}:{lineno}: expected key = value')
            continue
        key, value = (s.strip() for s in line.split('=', 1))
        try:
            if key.startswith('strategy.'):
                strategies.append((int(key.split('.', 1)[1]), value))
            elif key.startswith('theta.'):
                thetas.append((int(key.split('.', 1)[1]), int(value)))
            elif key == 'partition' or key.startswith('partition.'):
                partitions.append(_partition(value))
            elif key in INT_KEYS:
                params[key] = int(value)
            elif key in FLOAT_KEYS:
                params[key] = float(value)
            elif key in BOOL_KEYS:
                params[key] = value.lower() in ('1', 'true', 'yes', 'on')
            elif key in INT_LIST_KEYS:
                params[key] = _int_list(value)
            elif key in STR_LIST_KEYS:
                params[key] = tuple(v.strip() for v in value.split(',') if v.strip())
            elif key in STR_KEYS:
                params[key] = value
            else:
                violations.append(f'{source}:{lineno}: unknown key {key!r}')
        except ValueError:
            violations.append(f'{source}:{lineno}: bad value for {key}: {value!r}')
    if violations:
        raise ConfigError(violations)
    if strategies:
        params['strategies'] = tuple(sorted(strategies))
    if thetas:
        params['thetas'] = tuple(sorted(thetas))
    if partitions:
        params['partition'] = tuple(partitions)
    return params


def load_config(path):
    """
    Load and validate one scenario file. The scenario name defaults to the file stem.

    Returns:
        ScenarioConfig
    """
    path = Path(path)
    params = parse_config(path.read_text(), source=str(path))
    params.setdefault('name', path.stem)
    config = ScenarioConfig.from_dict(params)
    logger.debug('loaded %s (%s)', path, config.config_hash())
    return config


def load_suite(path):
    """ All `*.cfg` scenarios of a directory, in file-name order, or the single file given. """
    path = Path(path)
    if path.is_dir():
        return [load_config(p) for p in sorted(path.glob('*.cfg'))]
    return [load_config(path)]
