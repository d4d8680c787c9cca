import sys
from argparse import ArgumentParser

from fptbridge.runner import Runner, run_command


def main():
    parser = ArgumentParser("First passage time densities of martingales over moving boundaries")
    # Required arguments
    parser.add_argument(
        "command",
        type=str,
        choices=Runner.COMMANDS,
        help=(
            "Command to run:\n"
            '    * "density": first passage density and distribution on the grid\n'
            '    * "cdf": first passage distribution on the grid\n'
            '    * "mc-validate": compare with Monte Carlo, exit code 4 on failure\n'
            '    * "simulate": simulated first passage times\n'
            '    * "kernel": one transition kernel on a state grid\n'
            '    * "gauge-dump": gauge functions on [0, s_max]\n'
            '    * "selftest": residuals of the kernels against their equations\n'
        ),
    )
    # Optional arguments
    parser.add_argument(
        "--config",
        type=str,
        default=None,
        help="YAML configuration, bare names are looked up in fptbridge/examples/configs",
    )
    parser.add_argument("--seed", type=int, default=None, help="Overwriting mc.seed")
    parser.add_argument("--threads", type=int, default=None, help="Overwriting mc.threads")
    parser.add_argument("--output", type=str, default=None, help="Overwriting output.path")
    parser.add_argument(
        "--delta-frac", type=float, default=None, help="Overwriting propagator.delta_frac"
    )
    parser.add_argument(
        "--richardson",
        type=str,
        choices=["true", "false"],
        default=None,
        help="Overwriting propagator.richardson",
    )
    parser.add_argument(
        "--method",
        type=str,
        choices=["auto", "gauge", "pde"],
        default=None,
        help="Overwriting propagator.method",
    )
    parser.add_argument("--loglevel", type=str, default="INFO", help="Logging level")
    parser.add_argument("--debug", action="store_true", help="Log at DEBUG level")
    parser.add_argument("--progress", action="store_true", help="Show progress bars")
    parsed_args = parser.parse_args()

    richardson = None if parsed_args.richardson is None else parsed_args.richardson == "true"
    exit_code = run_command(
        parsed_args.command,
        config_file=parsed_args.config,
        loglevel=parsed_args.loglevel,
        debug=parsed_args.debug,
        progress=parsed_args.progress,
        seed=parsed_args.seed,
        threads=parsed_args.threads,
        output=parsed_args.output,
        delta_frac=parsed_args.delta_frac,
        richardson=richardson,
        method=parsed_args.method,
    )
    sys.exit(exit_code)


if __name__ == "__main__":
    main()
