import argparse
import logging
import sys

import chdbc
from chdbc.config_readers import ConfigError
from chdbc.config_readers import RunConfig
from chdbc.config_readers import SweepConfig
from chdbc.config_readers import apply_overrides
from chdbc.config_readers import read_config_file
from chdbc.model import InverseOutOfRangeError
from chdbc.stepper import NewtonError


EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4


def _load(path, overrides, output_dir):
    d = apply_overrides(read_config_file(path), overrides)
    if output_dir is not None:
        d["output_dir"] = output_dir
    return d


def main(argv=None):
    """
    Command line interface for chdbc.
    """
    parser = argparse.ArgumentParser(description=('Cahn-Hilliard solver with '
                                                  'dynamic boundary conditions'))
    parser.add_argument('-v', '--verbose', action='count', default=0,
                        help='print progress (-v) or Newton iterations (-vv)')
    subparsers = parser.add_subparsers(dest='cmd', help='run, sweep, assemble-dump or version',
                                       metavar='{run, sweep, assemble-dump, version}')
    subparsers.required = True

    # parser for the "run" command
    parser_run = subparsers.add_parser('run', help='run a single simulation')
    parser_run.add_argument('config', help=('path to a run config file'))
    parser_run.add_argument('-o', '--output-dir',
                            help=('output directory, overrides the output_dir '
                                  'key of the config'))
    parser_run.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                            help=('override a config key, can be repeated'))

    # parser for the "sweep" command
    parser_sweep = subparsers.add_parser('sweep',
                                         help='run a convergence study in the '
                                              'penalty parameter K')
    parser_sweep.add_argument('config', help=('path to a sweep config file'))
    parser_sweep.add_argument('-o', '--output-dir',
                              help=('output directory, overrides the output_dir '
                                    'key of the config'))
    parser_sweep.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                              help=('override a config key, can be repeated'))

    # parser for the "assemble-dump" command
    parser_dump = subparsers.add_parser('assemble-dump',
                                        help='write the assembled matrices in '
                                             'MatrixMarket files')
    parser_dump.add_argument('n_cells', type=int, help=('number of cells per axis'))
    parser_dump.add_argument('output_dir', help=('output directory'))

    # parser for the "version" command
    subparsers.add_parser('version', help='print the version number')

    args = parser.parse_args(argv)

    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')
    logging.captureWarnings(True)

    if args.cmd == 'version':
        print(chdbc.__version__)
        return 0

    if args.cmd == 'assemble-dump' and args.n_cells < 1:
        parser.error('n_cells must be a positive integer')

    try:
        if args.cmd == 'run':
            config = RunConfig(_load(args.config, args.set, args.output_dir))
            chdbc.run_simulation(config, verbose=True)

        elif args.cmd == 'sweep':
            config = SweepConfig(_load(args.config, args.set, args.output_dir))
            chdbc.run_sweep(config, verbose=True)

        elif args.cmd == 'assemble-dump':
            chdbc.assemble_dump(args.n_cells, args.output_dir, verbose=True)

    except (ConfigError, InverseOutOfRangeError) as e:
        print('chdbc: config error: {}'.format(e), file=sys.stderr)
        return EXIT_CONFIG
    except NewtonError as e:
        print('chdbc: solver failure at step {}: {}'.format(e.step_index, e),
              file=sys.stderr)
        return EXIT_SOLVER
    except OSError as e:
        print('chdbc: I/O error: {}'.format(e), file=sys.stderr)
        return EXIT_IO

    return 0


if __name__ == '__main__':
    sys.exit(main())
