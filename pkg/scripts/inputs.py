import os
from pathlib import Path
from prft.harness import ScenarioConfig

use_multiprocessing = True
# number of worker processes across (scenario, seed) runs
ncpus = 4

# Output directory for traces and reports
outputdir = Path(os.environ.get('PRFT_OUTPUT_DIR', './prft_output'), 'theorem_scenarios')
# Report format: 'records' (line-delimited JSON) or 'table'
report_format = 'table'

seeds = tuple(range(20))

##########################
# Honest runs
##########################
honest_params = [
    {'name': f'honest-sync-n{n}', 'n': n, 'rounds': 10, 'seeds': seeds} for n in (5, 9, 13)
] + [
    # GST at mid-run: pre-GST delays up to 3x the timeout
    {'name': f'honest-psync-n{n}', 'n': n, 'rounds': 10, 'seeds': seeds, 'delay_model': 'psync',
     'gst': 400, 'pre_gst_ceiling': 120} for n in (5, 9, 13)
]

##########################
# Byzantine tolerance, n = 4 t0 + 1, t = t0
##########################
byzantine_params = [
    {'name': f'byz-{strategy}-t0{t0}', 'n': 4 * t0 + 1, 't': t0, 'byzantine_strategy': strategy,
     'rounds': 10, 'seeds': seeds}
    for t0 in (1, 2, 3) for strategy in ('PiDS', 'ViewChangeStorm')
]

##########################
# Impossibility demos, n = 10, 4 colluders
##########################
theorem_params = [
    # theta = 3: abstaining collusion stops the chain without any penalty
    {'name': 'abstain-theta3', 'n': 10, 'k': 4, 't0': 2, 'theta': 3, 'rational_strategy': 'PiAbs',
     'rounds': 50, 'seeds': seeds, 'expect_fail': ('liveness',)},
    # theta = 2: blocks only under colluding leaders, tx-0 never included
    {'name': 'censor-theta2', 'n': 10, 'k': 4, 't0': 2, 'theta': 2, 'rational_strategy': 'PiPC',
     'censored': ('tx-0',), 'rounds': 50, 'seeds': seeds, 'expect_fail': ('censorship',)},
    # theta = 1: joint double-signing by more than t0 colluders gets exposed
    {'name': 'fork-theta1', 'n': 9, 't': 1, 'k': 3, 'theta': 1, 'rational_strategy': 'PiDS',
     'byzantine_strategy': 'PiDS', 'rounds': 10, 'seeds': seeds},
]

scenarios = [ScenarioConfig.from_dict(p) for p in honest_params + byzantine_params + theorem_params]
