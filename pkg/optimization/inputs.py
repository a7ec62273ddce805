import os
from pathlib import Path
from collections import OrderedDict
from prft import harness

# the multiprocessing start method can only bet set once
use_multiprocessing = True
# number of cpus to use for parallelization
ncpus = 8
# Output directory for the per-scenario records of the sweeps
outputdir = Path(os.environ.get('PRFT_OUTPUT_DIR', './prft_output'), 'sweeps')

##########################
# Complexity sweep
##########################
# Honest synchronous runs with an empty mempool: only protocol messages are counted
complexity_params = OrderedDict({
    'n': [5, 9, 13, 17],
    'n_txs': 0,
    'rounds': 6,
    'seeds': (0, 1, 2),
})


def get_sweep_configs(params, prefix):
    """ One validated ScenarioConfig per combination of the list-valued entries of params. """
    keys = [k for k, v in params.items() if isinstance(v, list)]
    fixed = {k: v for k, v in params.items() if k not in keys}
    combos = [{}]
    for key in keys:
        combos = [dict(c, **{key: v}) for c in combos for v in params[key]]
    configs = []
    for combo in combos:
        name = prefix + '-' + '-'.join(f'{k}{v}' for k, v in combo.items())
        configs.append(harness.ScenarioConfig.from_dict({'name': name, **fixed, **combo}))
    return configs


complexity_configs = get_sweep_configs(complexity_params, 'complexity')

##########################
# DSIC sweep
##########################
dsic_ns = (5, 9, 13)
dsic_seeds = range(20)
dsic_deviations = ('PiAbs', 'PiDS')
# strategies of the byzantine players while the first rational player deviates
dsic_byzantine = ('Pi0', 'PiAbs', 'PiDS')
