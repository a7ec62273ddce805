import os
from pathlib import Path
import pandas as pd
from prft import harness

datadir = Path(os.environ.get('PRFT_OUTPUT_DIR', './prft_output'), 'sweeps')

# Concatenate all complexity csv file content into one dataframe
filelist = sorted(datadir.glob('complexity_runs*.csv'))
df = pd.concat([pd.read_csv(f) for f in filelist], axis=0, ignore_index=True)
df.sort_values(['n', 'seed'], inplace=True)

per_n = df.groupby('n')[['sends_per_round', 'bytes_per_round']].mean().reset_index()
rows = []
for metric, exponent in (('sends_per_round', 'message_exponent'), ('bytes_per_round', 'byte_exponent')):
    slope, stderr = harness.loglog_slope(per_n['n'], per_n[metric])
    stated = harness.COMPLEXITY_TABLE.set_index('protocol').loc['pRFT', exponent]
    rows.append({'metric': metric, 'slope': slope, 'stderr': stderr, 'stated_exponent': stated})
slopes = pd.DataFrame(rows)
print(per_n.to_string(index=False))
print(slopes.to_string(index=False))
print(harness.ACCOUNTING_NOTE)
slopes.to_csv(datadir / 'complexity_slopes.csv', index=False)

# DSIC grid: fraction of (scenario, seed, deviation) triples where deviating did not pay
dsic_file = datadir / 'dsic_sweep.csv'
if dsic_file.exists():
    dsic = pd.read_csv(dsic_file)
    summary = dsic.groupby(['n', 't', 'k', 'byzantine', 'deviation'])['dominated'].mean().rename('dominated_fraction')
    print(summary.to_string())
    print(f"DSIC held in {dsic['dominated'].mean():0.1%} of the runs")
