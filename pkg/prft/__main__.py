"""
Command line: python -m prft {run,check,sweep,report}

Exit codes: 0 when every acceptance invariant held, 1 on a violation, 2 on a config error.
"""
import argparse
import logging
import sys
from pathlib import Path

from prft import harness
from prft.config import load_suite
from prft.core import ConfigError
from prft.netsim import RunTrace

logger = logging.getLogger('prft')


def _ns(value):
    return tuple(int(v) for v in value.split(',') if v.strip())


def build_parser():
    parser = argparse.ArgumentParser(prog='prft', description='pRFT rational-consensus simulator')
    parser.add_argument('--verbose', action='store_true', help='debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    p_run = sub.add_parser('run', help='run a scenario file or a suite directory')
    p_run.add_argument('path')
    p_run.add_argument('--workers', type=int, default=1)
    p_run.add_argument('--format', choices=('records', 'table'), default='records')

    p_check = sub.add_parser('check', help='robustness verdicts of a stored trace')
    p_check.add_argument('trace')
    p_check.add_argument('--c', type=int, default=0)

    p_sweep = sub.add_parser('sweep', help='complexity sweep over n')
    p_sweep.add_argument('--n', type=_ns, default=(5, 9, 13, 17))
    p_sweep.add_argument('--param', choices=('sends', 'bytes', 'both'), default='both')
    p_sweep.add_argument('--seeds', type=_ns, default=(0,))
    p_sweep.add_argument('--workers', type=int, default=1)

    p_report = sub.add_parser('report', help='re-emit a stored records bundle')
    p_report.add_argument('bundle')
    p_report.add_argument('--format', choices=('records', 'table'), default='table')
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    out_dir = harness.output_dir()
    try:
        if args.command == 'run':
            configs = load_suite(args.path)
            bundle = harness.run_suite(configs, out_dir=out_dir, max_workers=args.workers)
            path = harness.emit_report(bundle, out_dir, fmt=args.format)
            logger.info('report written to %s', path)
            return 0 if bundle.passed else 1

        if args.command == 'check':
            trace = RunTrace.from_jsonl(Path(args.trace).read_text())
            report = harness.check_robustness(trace, c=args.c)
            for clause, verdict in report.to_record().items():
                print(f'{clause:12s} {verdict}')
            return 0 if report.passed else 1

        if args.command == 'sweep':
            per_n, slopes = harness.complexity_sweep(ns=args.n, seeds=args.seeds, max_workers=args.workers)
            if args.param != 'both':
                slopes = slopes[slopes['metric'] == f'{args.param}_per_round']
            print(per_n.to_string(index=False))
            print(slopes.to_string(index=False))
            print(harness.COMPLEXITY_TABLE.to_string(index=False))
            print(harness.ACCOUNTING_NOTE)
            return 0

        bundle = harness.load_report(args.bundle)
        path = harness.emit_report(bundle, out_dir, fmt=args.format)
        logger.info('report written to %s', path)
        return 0 if bundle.passed else 1
    except ConfigError as e:
        for violation in e.violations:
            logger.error(violation)
        return 2
    except harness.SuiteAbort as e:
        logger.error('suite aborted: %s', e)
        return 1


if __name__ == '__main__':
    sys.exit(main())
