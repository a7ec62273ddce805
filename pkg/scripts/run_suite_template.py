from scripts import inputs
from prft import harness
import logging

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')

if __name__ == "__main__":
    # the multiprocessing start method can only be set once
    if inputs.use_multiprocessing:
        import multiprocessing
        try:
            multiprocessing.set_start_method('spawn', force=True)
        except RuntimeError:
            logging.warning('could not set the multiprocessing start method')

    inputs.outputdir.mkdir(parents=True, exist_ok=True)
    ncpus = inputs.ncpus if inputs.use_multiprocessing else 1
    bundle = harness.run_suite(inputs.scenarios, out_dir=inputs.outputdir, max_workers=ncpus)

    path = harness.emit_report(bundle, inputs.outputdir, fmt=inputs.report_format)
    harness.emit_report(bundle, inputs.outputdir, fmt='records')
    print(f'Report: {path}')
    print(f'All acceptance invariants held: {bundle.passed}')
