'''
Command line: synthesize problem bundles, analyze SA factors, compare
partition schemes and run solver benchmarks.

    stochascope synth --kind blur --d1 32 --d2 32 --r-max 3 --snr 3 --seed 7 --out-dir blur32
    stochascope analyze blur32 --k-list 1,2,5,10,20,50 --out-dir blur32/analysis
    stochascope compare-partitions blur32 --k 10 --out-dir blur32/ranking
    stochascope solve blur32 --configs solvers.json --out-dir blur32/traces
'''

import argparse
import logging
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from .bundles import load_bundle, load_vector, write_bundle, write_csv, write_json
from .constants import (CERTIFIED_DELTA, HEURISTIC_DELTA, EXPECTED_SA_COLUMNS,
                        EXPECTED_SA_SCHEMA, H_TERMS, PARTITION_RANKING_SCHEMA,
                        SA_CURVE_COLUMNS, SA_CURVE_SCHEMA, TRACE_COLUMNS, TRACE_SCHEMA)
from .experiment import run_experiment
from .operators import (BlurSpec, build_random_ensemble, build_space_varying_blur,
                        identical_rows_operator, identity_operator, load_matrix_market)
from .partitions import make_partition
from .problems import Problem, phantom_image, synthesize_problem
from .prox import ProxTerm, RegularizerSpec
from .safactor import (expected_sa_curve, random_partition_bounds, sa_curve, sa_factor,
                       summarize_operator)
from .traces import load_configs
from .workers import worker_count

SYNTH_KINDS = ('gaussian', 'gaussian025', 'uniform01', 'subsampled_wishart', 'identical_rows',
               'identity', 'blur', 'mtx')
ANALYSIS_SCHEMES = ('interleaved', 'random', 'consecutive')


class StochascopeJob():
    '''
    Runs one command line verb.

    Attributes
    ----------
    args : argparse.Namespace
        contains all command line args
    logger : logging.RootLogger
        logging class to print info
    parser : argparse.ArgumentParser
        reports option combinations that only fail once the bundle is read
    threads : int
        worker processes allowed by STOCHASCOPE_THREADS

    Public methods
    --------------
    run()
        executes the verb and returns the process exit code
    '''

    def __init__(self, args, parser=None):
        '''
        Set up args and logging.
        '''
        self.args = args
        self.parser = parser if parser is not None else build_parser()

        self.logger = logging.getLogger()
        logging.basicConfig(format='[%(asctime)s] %(levelname)s: %(message)s',
            datefmt='%H:%M:%S')
        self.logger.setLevel(logging.INFO if self.args.verbose else logging.WARNING)
        self.threads = worker_count()

    def run(self):
        '''
        Runs the selected verb and logs the total time.
        '''
        start = time.time()
        verbs = {'synth': self._synth,
                 'analyze': self._analyze,
                 'compare-partitions': self._compare_partitions,
                 'solve': self._solve}
        exit_code = verbs[self.args.command]()

        end = time.time()
        self.logger.info(f'Done! ({round(end - start, 2)}s)')
        return exit_code

    def _out_path(self, name):
        os.makedirs(self.args.out_dir, exist_ok=True)
        return os.path.join(self.args.out_dir, name)

    def _wants(self, fmt):
        return self.args.format is None or self.args.format == fmt

    def _synth(self):
        '''
        Builds the operator, ground truth and data from one master seed split
        into three streams (operator, x_true, noise) and writes the bundle.
        '''
        args = self.args
        operator_seed, x_seed, noise_seed = np.random.SeedSequence(args.seed).spawn(3)
        A, generator = self._build_operator(operator_seed)
        reg = self._regularizer(A)

        if args.kind == 'mtx' and args.b is not None:
            b = load_vector(args.b) if args.b.endswith('.npy') else np.loadtxt(args.b)
            problem = Problem(A, b, None, reg)
            snr = None
            self.logger.info('Measured data given; estimation errors will be unavailable')
        else:
            if A.image_shape is not None:
                x_true = phantom_image(*A.image_shape)
            else:
                x_true = np.random.default_rng(x_seed).random(A.d)
            problem = synthesize_problem(A, x_true, args.snr, noise_seed, reg)
            snr = args.snr

        write_bundle(args.out_dir, problem, generator, args.seed, snr)
        return 0

    def _build_operator(self, seed):
        args = self.args
        kind = args.kind
        if kind in ('gaussian', 'gaussian025'):
            mean = 0.25 if kind == 'gaussian025' else args.mean
            A = build_random_ensemble('gaussian', args.n, args.d, seed, mean=mean, var=args.var)
            return A, {'kind': 'gaussian', 'n': args.n, 'd': args.d, 'mean': mean, 'var': args.var}
        if kind in ('uniform01', 'subsampled_wishart'):
            A = build_random_ensemble(kind, args.n, args.d, seed)
            return A, {'kind': kind, 'n': args.n, 'd': args.d}
        if kind == 'identical_rows':
            row = np.random.default_rng(seed).standard_normal(args.d)
            return identical_rows_operator(row, args.n), {'kind': kind, 'n': args.n, 'd': args.d}
        if kind == 'identity':
            return identity_operator(args.n), {'kind': kind, 'n': args.n}
        if kind == 'blur':
            spec = BlurSpec(args.d1, args.d2, r_min=args.r_min, r_max=args.r_max)
            return build_space_varying_blur(spec), {'kind': kind, 'd1': args.d1, 'd2': args.d2,
                                                    'r_min': args.r_min, 'r_max': args.r_max}
        A = load_matrix_market(args.input)
        return A, {'kind': 'mtx', 'source': os.path.basename(args.input)}

    def _regularizer(self, A):
        args = self.args
        kwargs = {'kind': args.reg_h, 'weight': args.gamma}
        if args.reg_h == 'box':
            kwargs['lo'], kwargs['hi'] = args.lo, args.hi
        h = ProxTerm(**kwargs)
        if args.reg_D == 'diff':
            if A.image_shape is None:
                self.parser.error('--reg-D diff needs an image operator (--kind blur)')
            return RegularizerSpec.total_variation(args.lam, A.image_shape, h=h)
        return RegularizerSpec(g='l1' if args.lam > 0 else 'none', lam=args.lam, h=h)

    def _analyze(self):
        '''
        Writes the SA curve (one row per scheme and K) and the with-replacement
        expected-SA curve for m = ⌊n/K⌋.
        '''
        args = self.args
        A = load_bundle(args.bundle).problem.A
        summary = summarize_operator(A)
        deltas = (CERTIFIED_DELTA, HEURISTIC_DELTA) + tuple(
            d for d in args.delta if d not in (CERTIFIED_DELTA, HEURISTIC_DELTA))

        reports = []
        for scheme in args.scheme:
            reports.extend(sa_curve(A, scheme, args.k_list, seed=args.seed, summary=summary,
                                    threads=self.threads))
        records = []
        for report in reports:
            record = report.to_dict()
            record['random_bounds'] = [asdict(random_partition_bounds(A, report.K, delta,
                                                                      summary=summary))
                                       for delta in deltas]
            records.append(record)

        m_list = sorted({max(1, summary.n // K) for K in args.k_list}, reverse=True)
        expected = expected_sa_curve(A, m_list, summary=summary)

        if self._wants('csv'):
            write_csv(self._out_path('sa_curve.csv'), SA_CURVE_SCHEMA, SA_CURVE_COLUMNS,
                      [r.to_row() for r in reports])
            write_csv(self._out_path('expected_sa.csv'), EXPECTED_SA_SCHEMA,
                      EXPECTED_SA_COLUMNS, [r.to_row() for r in expected])
        if self._wants('json'):
            write_json(self._out_path('sa_curve.json'),
                       {'schema': SA_CURVE_SCHEMA, 'operator': A.label, 'n': summary.n,
                        'd': summary.d, 'seed': args.seed, 'reports': records})
            write_json(self._out_path('expected_sa.json'),
                       {'schema': EXPECTED_SA_SCHEMA, 'operator': A.label,
                        'note': 'lower bound evaluated as stated; equals 2 at m = n',
                        'reports': [r.to_dict() for r in expected]})
        self.logger.info(f'Analyzed {len(reports)} (scheme, K) pairs')
        return 0

    def _compare_partitions(self):
        '''
        Ranks the schemes at one K by α_ℓ (descending), ties broken by name.
        '''
        args = self.args
        A = load_bundle(args.bundle).problem.A
        summary = summarize_operator(A)
        if not 1 <= args.k <= summary.n:
            self.parser.error(f'--k must lie in [1, {summary.n}], got {args.k}')
        scored = []
        for scheme in sorted(set(args.scheme)):
            P = make_partition(scheme, summary.n, args.k, seed=args.seed)
            scored.append((scheme, sa_factor(A, P, summary=summary)))
        scored.sort(key=lambda item: (-item[1].alpha_ell, item[0]))

        columns = ('rank', 'scheme', 'K', 'alpha_ell', 'upsilon', 'mu_ell', 'L_b')
        rows = [[rank, scheme, r.K, r.alpha_ell, r.upsilon, r.mu_ell, r.L_b]
                for rank, (scheme, r) in enumerate(scored, start=1)]
        if self._wants('csv'):
            write_csv(self._out_path('partition_ranking.csv'), PARTITION_RANKING_SCHEMA,
                      columns, rows)
        if self._wants('json'):
            write_json(self._out_path('partition_ranking.json'),
                       {'schema': PARTITION_RANKING_SCHEMA, 'operator': A.label,
                        'K': args.k, 'seed': args.seed,
                        'ranking': [dict(zip(columns, row)) for row in rows]})
        for row in rows:
            print(f'{row[0]:>2}  {row[1]:<12} alpha_ell={row[3]:.6g}  upsilon={row[4]:.6g}')
        return 0

    def _solve(self):
        '''
        Runs every config of the configs file; exits nonzero if any failed.
        '''
        args = self.args
        bundle = load_bundle(args.bundle)
        configs = load_configs(args.configs)
        if not bundle.est_error_available:
            self.logger.warning('No ground truth in bundle; est_error will be nan')
        traces = run_experiment(bundle.problem, configs, threads=self.threads)

        for trace in traces:
            if trace.completed:
                write_csv(self._out_path(f'trace_{trace.config.name}.csv'), TRACE_SCHEMA,
                          TRACE_COLUMNS, trace.rows())
        write_json(self._out_path('traces.json'),
                   {'schema': TRACE_SCHEMA, 'bundle': os.path.basename(os.path.abspath(args.bundle)),
                    'traces': [trace.to_dict() for trace in traces]})
        failed = [trace for trace in traces if not trace.completed]
        for trace in failed:
            self.logger.error(f'{trace.config.name}: {trace.error}')
        return 1 if failed else 0


def _int_list(text):
    try:
        values = [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected comma separated integers, got {text!r}')
    if not values:
        raise argparse.ArgumentTypeError('list must be nonempty')
    return values


def _float_list(text):
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected comma separated numbers, got {text!r}')


def build_parser():
    parser = argparse.ArgumentParser(description='Stochastic acceleration analysis of linear '
                                                 'inverse problems')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=0, help='Master random seed')
    common.add_argument('--out-dir', type=str, required=True, help='Directory for outputs')
    common.add_argument('--format', choices=('json', 'csv'), default=None,
                        help='Write only this report format (default: both)')
    common.add_argument('--verbose', action='store_true', default=False, help='Log detailed info')
    commands = parser.add_subparsers(dest='command', required=True)

    synth = commands.add_parser('synth', parents=[common], help='Write a problem bundle')
    synth.add_argument('--kind', choices=SYNTH_KINDS, required=True, help='Operator generator')
    synth.add_argument('--n', type=int, default=None, help='Rows')
    synth.add_argument('--d', type=int, default=None, help='Columns')
    synth.add_argument('--mean', type=float, default=0., help='Gaussian entry mean')
    synth.add_argument('--var', type=float, default=1., help='Gaussian entry variance')
    synth.add_argument('--d1', type=int, default=None, help='Image rows (blur)')
    synth.add_argument('--d2', type=int, default=None, help='Image columns (blur)')
    synth.add_argument('--r-min', type=float, default=0., help='Blur radius at the center')
    synth.add_argument('--r-max', type=float, default=0., help='Blur radius at the corners')
    synth.add_argument('--input', type=str, default=None, help='Matrix Market operator (mtx)')
    synth.add_argument('--b', type=str, default=None, help='Measured data for an mtx operator')
    synth.add_argument('--snr', type=float, default=None, help='log10 SNR of synthesized data')
    synth.add_argument('--lam', type=float, default=0., help='Weight of the l1 term g')
    synth.add_argument('--reg-D', choices=('identity', 'diff'), default='identity',
                       help='Linear map inside g')
    synth.add_argument('--reg-h', choices=H_TERMS, default='none', help='Simple term h')
    synth.add_argument('--gamma', type=float, default=1., help='Weight of h')
    synth.add_argument('--lo', type=float, default=None, help='Box lower bound')
    synth.add_argument('--hi', type=float, default=None, help='Box upper bound')

    analyze = commands.add_parser('analyze', parents=[common], help='Write SA curves')
    analyze.add_argument('bundle', type=str, help='Problem bundle directory')
    analyze.add_argument('--k-list', type=_int_list, required=True, help='Comma separated K values')
    analyze.add_argument('--scheme', choices=ANALYSIS_SCHEMES, action='append', default=None,
                         help='Partition scheme, repeatable (default: all)')
    analyze.add_argument('--delta', type=_float_list, default=[],
                         help='Extra comma separated delta values for random-partition bounds')

    compare = commands.add_parser('compare-partitions', parents=[common],
                                  help='Rank partition schemes at one K')
    compare.add_argument('bundle', type=str, help='Problem bundle directory')
    compare.add_argument('--k', type=int, required=True, help='Number of blocks')
    compare.add_argument('--scheme', choices=ANALYSIS_SCHEMES, action='append', default=None,
                         help='Partition scheme, repeatable (default: all)')

    solve = commands.add_parser('solve', parents=[common], help='Run solver configs')
    solve.add_argument('bundle', type=str, help='Problem bundle directory')
    solve.add_argument('--configs', type=str, required=True, help='JSON list of solver configs')
    return parser


def parse_args(argv=None, parser=None):
    parser = parser if parser is not None else build_parser()
    args = parser.parse_args(argv)
    if args.command == 'synth':
        if args.kind == 'blur':
            if args.d1 is None or args.d2 is None:
                parser.error('--kind blur requires --d1 and --d2')
        elif args.kind == 'mtx':
            if args.input is None:
                parser.error('--kind mtx requires --input')
        elif args.kind == 'identity':
            if args.n is None:
                parser.error('--kind identity requires --n')
        elif args.n is None or args.d is None:
            parser.error(f'--kind {args.kind} requires --n and --d')
        if args.reg_h == 'box' and (args.lo is None or args.hi is None):
            parser.error('--reg-h box requires --lo and --hi')
        if args.reg_h == 'support_indicator':
            parser.error('--reg-h support_indicator needs a mask, which the command line cannot '
                         'supply; build the regularizer with RegularizerSpec instead')
        if args.reg_D == 'diff' and args.kind not in ('blur', 'mtx'):
            parser.error('--reg-D diff needs an image operator (--kind blur)')
        if args.b is not None and args.kind != 'mtx':
            parser.error('--b is only accepted with --kind mtx')
    if args.command in ('analyze', 'compare-partitions') and args.scheme is None:
        args.scheme = list(ANALYSIS_SCHEMES)
    if args.command == 'analyze' and any(d <= np.e for d in args.delta):
        parser.error('--delta values must exceed e')
    return args


def main(argv=None):
    parser = build_parser()
    args = parse_args(argv, parser)
    job = StochascopeJob(args, parser)
    return job.run()


if __name__ == '__main__':
    sys.exit(main())
