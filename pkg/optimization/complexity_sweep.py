from functools import partial
from time import time
from concurrent.futures import ProcessPoolExecutor
import pandas as pd
from optimization import inputs
from prft import harness, gametheory

if __name__ == '__main__':

    # the multiprocessing start method can only be set once
    if inputs.use_multiprocessing:
        import multiprocessing
        multiprocessing.set_start_method('spawn')
    inputs.outputdir.mkdir(parents=True, exist_ok=True)

    pairs = [(config, seed) for config in inputs.complexity_configs for seed in config.seeds]
    # Prepare partial function for parallel pool & map, which can accept only the (config, seed) pair as argument
    run_partial = partial(harness.run_pair, out_dir=None)

    start = time()
    with ProcessPoolExecutor(max_workers=inputs.ncpus if inputs.use_multiprocessing else 1) as executor:
        records = list(executor.map(run_partial, pairs))
    bundle = harness.SuiteReport(pd.DataFrame(records))
    bundle.records.to_csv(inputs.outputdir / 'complexity_runs.csv', index=False)

    dsic = gametheory.dsic_sweep(ns=inputs.dsic_ns, seeds=inputs.dsic_seeds, deviations=inputs.dsic_deviations,
                                byzantine_strategies=inputs.dsic_byzantine)
    dsic.to_csv(inputs.outputdir / 'dsic_sweep.csv', index=False)

    end = time()
    etime = (end - start)/60
    print(f'Elapsed time: {etime:0.2f} min')

# At the end of this parallel job, use "sweep_aggregation.py" to fit the slopes and summarize the DSIC grid
