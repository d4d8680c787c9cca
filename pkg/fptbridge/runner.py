import time
import logging
import warnings
from typing import Dict, List, Optional, Tuple

import numpy as np
import yaml
from scipy.interpolate import PchipInterpolator

from fptbridge.bridge_kernel import BridgeLaw, absorbed_kernel_at, free_kernel, image_kernel
from fptbridge.config import RunConfig
from fptbridge.fpt_pipeline import cdf_with_tags, density_curve
from fptbridge.gauge import solve_gauge
from fptbridge.level_hitting import passage_kernel
from fptbridge.numerics import (
    ResidualGrid,
    check_backward_residual,
    check_forward_residual,
    estimate_convergence_order,
)
from fptbridge.propagator import (
    ExpectationResult,
    evaluate_bridge_expectation,
    schrodinger_kernel,
)
from fptbridge.simulators import (
    ks_statistic,
    mc_bridge_expectation,
    simulate_martingale_fpt,
    simulate_ou_fpt,
)
from fptbridge.utils import (
    ConfigError,
    DomainError,
    MassDeficitWarning,
    NumericalError,
    ShiftedDomainWarning,
    dump_csv,
    dump_json,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_VALIDATION = 4
KS_FACTOR = 3 * 0.886
CDF_POINTS = 80
RESIDUAL_THRESHOLD = 1e-4
MIN_CONVERGENCE_ORDER = 1.5


class Runner:
    """Runner evaluates one command of the command line interface.

        - build the clock and the boundary from the configuration
        - evaluate the command
        - write the output file and its metadata, only when the evaluation succeeded
    Every command returns a table (header and rows) or a report (dict), which is written as csv
    with a ``<path>.meta.json`` sidecar or as json with a ``metadata`` key. mc-validate always
    writes a json report.

    Attributes:
        config (RunConfig): the configuration
        command (str): command name, one of Runner.COMMANDS
        clock (VolatilityClock): the clock of the configuration
        boundary (MovingBoundary): the boundary of the configuration
        cfg (PropagatorConfig): settings of the bridge expectation
        threads (int): worker threads
        progress (bool): whether to show progress bars
        _output_path (str): output filename

    Args:
        config (RunConfig): the configuration
        command (str): command name
        loglevel (str, optional (default="INFO")): logging level
        debug (bool, optional (default=False)): log at DEBUG level
        progress (bool, optional (default=False)): show progress bars

    """

    COMMANDS = (
        "density",
        "cdf",
        "mc-validate",
        "simulate",
        "kernel",
        "gauge-dump",
        "selftest",
    )

    logging = logging.getLogger("runner_logger")

    def __init__(
        self,
        config: RunConfig,
        command: str,
        loglevel: str = "INFO",
        debug: bool = False,
        progress: bool = False,
    ):
        if command not in self.COMMANDS:
            raise ConfigError(f"Unknown command {command}, choose from {self.COMMANDS}")
        self.logging.setLevel(getattr(logging, loglevel.upper() if not debug else "DEBUG"))
        self.config = config
        self.command = command
        self.clock, self.boundary = config.build_model()
        self.cfg = config.build_propagator_config()
        self.threads = int(config["mc"]["threads"])
        self.progress = progress
        fmt = "json" if command == "mc-validate" else config["output"]["format"]
        self._format = fmt
        path = config["output"]["path"]
        self._output_path = path if path else f"fptbridge_{command.replace('-', '_')}.{fmt}"

    @property
    def horizon(self) -> float:
        return float(self.config["grid"]["s_max"])

    def write_output(self, result, exit_code: int = EXIT_OK):
        """Write a table (header, rows) or a report dict with the run metadata."""
        metadata = self.config.metadata()
        metadata["command"] = self.command
        metadata["exit_code"] = exit_code
        if isinstance(result, dict):
            dump_json(self._output_path, {**result, "metadata": metadata})
        elif self._format == "json":
            header, rows = result
            columns = {name: [_plain(row[i]) for row in rows] for i, name in enumerate(header)}
            dump_json(self._output_path, {**columns, "metadata": metadata})
        else:
            header, rows = result
            dump_csv(self._output_path, header, rows)
            dump_json(f"{self._output_path}.meta.json", metadata)
        print(f"Saving {self._output_path}")

    def density(self) -> Tuple[List[str], List[tuple]]:
        """First passage density and distribution on the configured grid."""
        grid = self.config.build_grid()
        self.logging.info(f"Evaluating the density on {len(grid)} points up to {grid[-1]}")
        curve = density_curve(
            self.boundary, self.clock, grid, self.cfg, threads=self.threads, progress=self.progress
        )
        self.logging.info(f"Total mass {curve.total_mass:.6g}, warnings {curve.warnings}")
        return ["s", "density", "cdf", "warnings"], list(curve.rows())

    def cdf(self) -> Tuple[List[str], List[tuple]]:
        """First passage distribution on the configured grid, every point by its own quadrature."""
        rows = []
        for s in self.config.build_grid():
            value, tags = cdf_with_tags(self.boundary, self.clock, float(s), self.cfg)
            rows.append((float(s), value, ";".join(dict.fromkeys(tags))))
            self.logging.debug(f"P(T <= {s}) = {value}")
        return ["s", "cdf", "warnings"], rows

    def _simulate_sample(self):
        mc = self.config["mc"]
        boundary = self.config["boundary"]
        if boundary["kind"] == "ou":
            return simulate_ou_fpt(
                boundary["coefficients"],
                mc["paths"],
                mc["ou_dt"],
                self.horizon,
                mc["seed"],
                rate=boundary["ou_rate"],
                sigma=boundary["ou_sigma"],
                bridge_correction=mc["bridge_correction"],
                threads=self.threads,
                progress=self.progress,
            )
        return simulate_martingale_fpt(
            self.boundary,
            self.clock,
            mc["paths"],
            mc["steps"],
            self.horizon,
            mc["seed"],
            threads=self.threads,
            bridge_correction=mc["bridge_correction"],
            progress=self.progress,
        )

    def simulate(self) -> Tuple[List[str], List[tuple]]:
        """Sorted simulated passage times of the crossed paths."""
        sample = self._simulate_sample()
        self.logging.info(
            f"{sample.n_crossed} of {sample.n_paths} paths crossed before {sample.horizon}"
        )
        return ["t"], [(float(t),) for t in sample.times]

    def analytic_cdf(self) -> Tuple[PchipInterpolator, List[str]]:
        """Monotone interpolant of the first passage distribution on [0, s_max] and the warning
        tags of its nodes."""
        grid = np.linspace(self.horizon / CDF_POINTS, self.horizon, CDF_POINTS)
        with warnings.catch_warnings():
            # the distribution is compared on [0, s_max] only
            warnings.simplefilter("ignore", MassDeficitWarning)
            curve = density_curve(
                self.boundary,
                self.clock,
                grid,
                self.cfg,
                threads=self.threads,
                progress=self.progress,
            )
        tags = [tag for tag in curve.warnings if tag != "mass_deficit"]
        nodes = np.concatenate([[0.0], grid])
        values = np.maximum.accumulate(np.concatenate([[0.0], curve.cdf]))
        return PchipInterpolator(nodes, values, extrapolate=False), tags

    def _route_value(
        self, method: str, s: float, analytic: ExpectationResult
    ) -> Tuple[Optional[float], Optional[str]]:
        """Bridge expectation by one route, or its failure message."""
        if analytic.method == method:
            return analytic.value, None
        try:
            result = evaluate_bridge_expectation(
                self.boundary, self.clock, 0.0, self.boundary.a, s, self.cfg, method=method
            )
        except (NumericalError, DomainError) as error:
            return None, str(error)
        return result.value, None

    def mc_validate(self) -> Dict:
        """Compare the analytic distribution and bridge expectation with Monte Carlo."""
        mc = self.config["mc"]
        a = self.boundary.a
        sample = self._simulate_sample()
        interpolant, tags = self.analytic_cdf()
        ks = ks_statistic(sample, lambda t: interpolant(np.clip(t, 0.0, self.horizon)))
        ks_threshold = KS_FACTOR / np.sqrt(sample.n_paths)

        s = float(mc["bridge_time"]) if mc["bridge_time"] is not None else self.horizon
        analytic = evaluate_bridge_expectation(self.boundary, self.clock, 0.0, a, s, self.cfg)
        gauge, gauge_error = self._route_value("gauge", s, analytic)
        pde, pde_error = self._route_value("pde", s, analytic)
        gap = None if gauge is None or pde is None else abs(gauge - pde) / abs(pde)
        estimate = mc_bridge_expectation(
            self.boundary,
            self.clock,
            a,
            s,
            mc["paths"],
            mc["bridge_steps"],
            mc["seed"],
            threads=self.threads,
            progress=self.progress,
        )
        discrepancy = abs(analytic.value - estimate.mean)
        tolerance = max(3 * estimate.stderr, 1e-6)
        passed = bool(ks < ks_threshold and discrepancy <= tolerance)
        self.logging.info(
            f"K-S {ks:.3g} (threshold {ks_threshold:.3g}), bridge expectation "
            f"{analytic.value:.6g} vs {estimate.mean:.6g} +- {estimate.stderr:.2g}"
        )
        return {
            "ks_statistic": ks,
            "ks_threshold": float(ks_threshold),
            "n_paths": sample.n_paths,
            "n_censored": sample.n_censored,
            "empirical_mass": float(sample.empirical_cdf(self.horizon)),
            "analytic_mass": float(interpolant(self.horizon)),
            "bridge_time": s,
            "bridge_expectation_analytic": analytic.value,
            "bridge_expectation_method": analytic.method,
            "bridge_expectation_gauge": gauge,
            "gauge_error": gauge_error,
            "bridge_expectation_pde": pde,
            "pde_error": pde_error,
            "gauge_pde_relative_gap": gap,
            "bridge_expectation_mc": estimate.mean,
            "stderr": estimate.stderr,
            "discrepancy": discrepancy,
            "warnings": list(dict.fromkeys(tags + analytic.tags)),
            "pass": passed,
        }

    def kernel(self) -> Tuple[List[str], List[tuple]]:
        """One kernel as a function of its forward state, see the kernel section."""
        section = self.config["kernel"]
        kind = section["kind"]
        t, x, tau = float(section["t"]), float(section["x"]), float(section["tau"])
        ys = np.linspace(float(section["y_min"]), float(section["y_max"]), int(section["n"]))
        if kind == "free":
            values = free_kernel(self.clock, t, x, tau, ys)
        elif kind == "image":
            values = image_kernel(self.clock, t, x, tau, ys)
        elif kind == "absorbed":
            values = absorbed_kernel_at(self.clock, float(section["barrier"]), t, x, tau, ys)
        elif kind == "passage":
            values = passage_kernel(self.clock, t, x, tau, ys)
        elif kind == "bridge":
            law = BridgeLaw(self.clock, self.boundary.a, float(section["s"]))
            values = law.bridge_transition(t, x, tau, ys)
        else:
            gauge = solve_gauge(
                self.boundary, self.clock, t, float(section["s"]), anchor=self.cfg.anchor
            )
            positive = ys > 0
            values = np.zeros_like(ys)
            values[positive] = schrodinger_kernel(gauge, self.clock, t, x, tau, ys[positive])
        values = np.broadcast_to(np.asarray(values, dtype=float), ys.shape)
        return ["y", "value"], [(float(y), float(v)) for y, v in zip(ys, values)]

    def gauge_dump(self) -> Tuple[List[str], List[tuple]]:
        """Gauge functions on [0, s_max] with grid.n + 1 equidistant points."""
        gauge = solve_gauge(self.boundary, self.clock, 0.0, self.horizon, anchor=self.cfg.anchor)
        table = gauge.tabulate(np.linspace(0.0, self.horizon, int(self.config["grid"]["n"]) + 1))
        header = ["t", "pi", "v", "pi_tilde", "v_tilde", "action"]
        return header, [tuple(float(table[k][i]) for k in header) for i in range(len(table["t"]))]

    def selftest(self) -> Tuple[List[str], List[tuple]]:
        """Residual checks of the kernels against their equations and a convergence order."""
        header = ["check", "equation", "value", "threshold", "pass"]
        rows = []
        for name, report in residual_suite(self.clock, self.boundary, self.horizon).items():
            passed = report.passes(RESIDUAL_THRESHOLD)
            rows.append((name, report.pde, report.max_residual, RESIDUAL_THRESHOLD, passed))
            self.logging.info(f"{name}: {report.max_residual:.3g} at {report.location}")
        order = bridge_convergence_order(self.clock, self.boundary, self.horizon)
        passed = order > MIN_CONVERGENCE_ORDER
        rows.append(("convergence_order", "backward_bridge", order, MIN_CONVERGENCE_ORDER, passed))
        self.logging.info(f"Convergence order of the backward bridge residual {order:.3f}")
        return header, rows

    def evaluate(self):
        """The table or report of the command and its exit code."""
        result = getattr(self, self.command.replace("-", "_"))()
        if self.command == "mc-validate" and not result["pass"]:
            return result, EXIT_VALIDATION
        if self.command == "selftest" and not all(row[-1] for row in result[1]):
            return result, EXIT_NUMERICAL
        return result, EXIT_OK

    def run(self) -> int:
        """Evaluate the command, write its output and return the exit code.

        Numerical and domain failures are logged and return 3 without output. A failed
        mc-validate writes its report and returns 4, a failed selftest writes its table and
        returns 3.

        """
        global_start = time.time()
        cpu_global_start = time.process_time()
        try:
            result, exit_code = self.evaluate()
        except ConfigError as error:
            self.logging.error(f"{self.command} failed: {error}")
            exit_code = EXIT_CONFIG
        except (NumericalError, DomainError) as error:
            self.logging.error(f"{self.command} failed: {error}")
            exit_code = EXIT_NUMERICAL
        else:
            self.write_output(result, exit_code)
        print(
            "Used real time {0:.02f}s, CPU time {1:.02f}s".format(
                time.time() - global_start, time.process_time() - cpu_global_start
            )
        )
        return exit_code


def _plain(value):
    return value.item() if isinstance(value, np.generic) else value


def residual_suite(clock, boundary, s: float) -> Dict:
    """Residuals of the free, image, bridge and gauge kernels against their equations.

    Backward checks run on times in [0.1 s, 0.6 s] with the forward end at 0.8 s, forward checks
    on [0.2 s, 0.7 s] started at 0.1 s; states span [a/2, 3a/2].

    """
    a = boundary.a
    backward = ResidualGrid(
        np.linspace(0.1 * s, 0.6 * s, 6),
        np.linspace(0.5 * a, 1.5 * a, 6),
        dt=1e-4 * min(1.0, s),
        dx=1e-3 * min(1.0, a),
    )
    forward = ResidualGrid(
        np.linspace(0.2 * s, 0.7 * s, 6), backward.states, dt=backward.dt, dx=backward.dx
    )
    t0, tau0 = 0.1 * s, 0.8 * s
    law = BridgeLaw(clock, a, s)
    gauge = solve_gauge(boundary, clock, 0.0, s)

    def free(t, x):
        return free_kernel(clock, t, x, tau0, a)

    def image(tau, y):
        return image_kernel(clock, t0, a, tau, y)

    def bridge_backward(t, x):
        return law.bridge_transition(t, x, tau0, 0.5 * a)

    def bridge_forward(tau, y):
        return law.bridge_transition(t0, a, tau, y)

    def gauge_backward(t, x):
        return schrodinger_kernel(gauge, clock, t, x, tau0, a)

    def gauge_forward(tau, y):
        return schrodinger_kernel(gauge, clock, t0, a, tau, y)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ShiftedDomainWarning)
        return {
            "free_backward": check_backward_residual(
                free, clock, boundary, tau0, backward, pde="heat"
            ),
            "image_forward": check_forward_residual(
                image, clock, s, forward, pde="heat", singular_times=(t0,)
            ),
            "bridge_backward": check_backward_residual(
                bridge_backward, clock, boundary, s, backward, singular_times=(tau0,)
            ),
            "bridge_forward": check_forward_residual(
                bridge_forward, clock, s, forward, singular_times=(t0,)
            ),
            "schrodinger_backward": check_backward_residual(
                gauge_backward, clock, boundary, tau0, backward, pde="schrodinger"
            ),
            "schrodinger_forward": check_forward_residual(
                gauge_forward,
                clock,
                s,
                forward,
                pde="schrodinger",
                boundary=boundary,
                singular_times=(t0,),
            ),
        }


def bridge_convergence_order(clock, boundary, s: float) -> float:
    """Observed order of the backward bridge residual under halving of both steps."""
    a = boundary.a
    law = BridgeLaw(clock, a, s)
    tau0 = 0.8 * s
    base = ResidualGrid(
        np.linspace(0.1 * s, 0.6 * s, 6),
        np.linspace(0.5 * a, 1.5 * a, 6),
        dt=4e-3 * min(1.0, s),
        dx=4e-3 * min(1.0, a),
    )
    grids = [base, base.refined(2), base.refined(4)]
    residuals = [
        check_backward_residual(
            lambda t, x: law.bridge_transition(t, x, tau0, 0.5 * a),
            clock,
            boundary,
            s,
            grid,
            pde="bridge",
            singular_times=(tau0,),
        ).max_residual
        for grid in grids
    ]
    return estimate_convergence_order(residuals, [grid.dt for grid in grids])


def run_command(
    command: str,
    config_file: Optional[str] = None,
    loglevel: str = "INFO",
    debug: bool = False,
    progress: bool = False,
    **overrides,
) -> int:
    """Load the configuration, apply the command line overrides and run one command.

    Returns:
        int: exit code, 0 on success, 2 for configuration errors, 3 for numerical failures and
            4 for a failed mc-validate

    """
    logger = Runner.logging
    logger.setLevel(getattr(logging, loglevel.upper() if not debug else "DEBUG"))
    try:
        config = RunConfig.from_file(config_file) if config_file else RunConfig()
        config = config.with_overrides(**overrides)
        runner = Runner(config, command, loglevel=loglevel, debug=debug, progress=progress)
    except (ConfigError, yaml.YAMLError, FileNotFoundError) as error:
        logger.error(f"Invalid configuration: {error}")
        return EXIT_CONFIG
    except (NumericalError, DomainError) as error:
        logger.error(f"{command} failed: {error}")
        return EXIT_NUMERICAL
    return runner.run()


def cmd_density(config: RunConfig) -> int:
    return Runner(config, "density").run()


def cmd_cdf(config: RunConfig) -> int:
    return Runner(config, "cdf").run()


def cmd_mc_validate(config: RunConfig) -> int:
    return Runner(config, "mc-validate").run()


def cmd_simulate(config: RunConfig) -> int:
    return Runner(config, "simulate").run()


def cmd_kernel(config: RunConfig) -> int:
    return Runner(config, "kernel").run()


def cmd_gauge_dump(config: RunConfig) -> int:
    return Runner(config, "gauge-dump").run()


def cmd_selftest(config: RunConfig) -> int:
    return Runner(config, "selftest").run()
