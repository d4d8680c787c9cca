from copy import deepcopy
from typing import Any, Dict, Optional, Tuple

import numpy as np

from fptbridge.boundary import MovingBoundary, ou_to_martingale
from fptbridge.clock import DEFAULT_HORIZON, VolatilityClock
from fptbridge.propagator import PropagatorConfig
from fptbridge.utils import ConfigError, DomainError, deterministic_hash, load_yaml

_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "clock": {
        "kind": "constant",
        "sigma": 1.0,
        "rate": None,
        "exponent": None,
        "times": None,
        "values": None,
        "horizon": None,
    },
    "boundary": {
        "kind": "constant",
        "coefficients": [1.0],
        "derivative_mode": "analytic",
        "ou_rate": 1.0,
        "ou_sigma": 1.0,
    },
    "grid": {"s_min": 0.05, "s_max": 1.0, "n": 20, "spacing": "uniform"},
    "mc": {
        "paths": 100000,
        "steps": 1000,
        "seed": 0,
        "threads": 1,
        "bridge_time": None,
        "bridge_steps": 1000,
        "ou_dt": 1e-3,
        "bridge_correction": True,
    },
    "propagator": PropagatorConfig().to_dict(),
    "kernel": {
        "kind": "image",
        "t": 0.0,
        "x": 1.0,
        "tau": 0.5,
        "y_min": 0.0,
        "y_max": 3.0,
        "n": 31,
        "barrier": 0.0,
        "s": 1.0,
    },
    "output": {"path": None, "format": "csv"},
}

# number of coefficients of the fixed-size boundary presets
_PRESET_SIZES = {"constant": 1, "linear": 2, "quadratic": 3, "linear_in_variance": 2}
_CHOICES = {
    ("grid", "spacing"): ("uniform", "log"),
    ("output", "format"): ("csv", "json"),
    ("kernel", "kind"): ("free", "image", "absorbed", "passage", "bridge", "schrodinger"),
}


class RunConfig:
    """Validated run configuration of the command line interface.

    The configuration has the sections clock, boundary, grid, mc, propagator, kernel and output.
    Missing keys take their defaults, unknown sections or keys are rejected.

    Args:
        data (dict, optional (default=None)): sections of the configuration

    Raises:
        ConfigError: if a section or key is unknown or a value is malformed

    """

    def __init__(self, data: Optional[dict] = None):
        data = {} if data is None else data
        if not isinstance(data, dict):
            raise ConfigError(f"The configuration must be a mapping, got {type(data).__name__}")
        self._user_clock = "clock" in data
        config = deepcopy(_DEFAULTS)
        for section, values in data.items():
            if section not in config:
                raise ConfigError(f"Unknown section {section}, choose from {list(config)}")
            if values is None:
                continue
            if not isinstance(values, dict):
                raise ConfigError(f"Section {section} must be a mapping")
            for key, value in values.items():
                if key not in config[section]:
                    raise ConfigError(
                        f"Unknown key {key} in section {section}, "
                        f"choose from {list(config[section])}"
                    )
                config[section][key] = value
        self.config = config
        self._validate()

    @classmethod
    def from_file(cls, file_name: str) -> "RunConfig":
        """Load a YAML configuration, bare names are looked up in fptbridge/examples/configs."""
        return cls(load_yaml(file_name))

    def __getitem__(self, section: str) -> dict:
        return self.config[section]

    def to_dict(self) -> dict:
        return deepcopy(self.config)

    def with_overrides(
        self,
        seed: Optional[int] = None,
        threads: Optional[int] = None,
        output: Optional[str] = None,
        delta_frac: Optional[float] = None,
        richardson: Optional[bool] = None,
        method: Optional[str] = None,
    ) -> "RunConfig":
        """A new configuration with command line overrides applied."""
        data = self.to_dict()
        if not self._user_clock:
            data.pop("clock")
        for section, key, value in (
            ("mc", "seed", seed),
            ("mc", "threads", threads),
            ("output", "path", output),
            ("propagator", "delta_frac", delta_frac),
            ("propagator", "richardson", richardson),
            ("propagator", "method", method),
        ):
            if value is not None:
                data[section][key] = value
        return RunConfig(data)

    def metadata(self) -> dict:
        """Effective configuration without execution details, its hash and the version."""
        from fptbridge import __version__

        config = self.to_dict()
        config["mc"].pop("threads")
        return {
            "config": config,
            "config_hash": deterministic_hash(config),
            "version": __version__,
        }

    def _validate(self):
        for (section, key), choices in _CHOICES.items():
            if self.config[section][key] not in choices:
                raise ConfigError(
                    f"{section}.{key} must be one of {choices}, got {self.config[section][key]}"
                )
        grid = self.config["grid"]
        if not _is_number(grid["s_min"]) or not _is_number(grid["s_max"]):
            raise ConfigError("grid.s_min and grid.s_max must be numbers")
        if not 0 < grid["s_min"] <= grid["s_max"]:
            raise ConfigError(f"Need 0 < s_min <= s_max, got {grid['s_min']}, {grid['s_max']}")
        if not _is_int(grid["n"]) or grid["n"] < 1:
            raise ConfigError(f"grid.n must be a positive integer, got {grid['n']}")
        mc = self.config["mc"]
        for key in ("paths", "steps", "seed", "threads", "bridge_steps"):
            if not _is_int(mc[key]) or mc[key] < (0 if key == "seed" else 1):
                raise ConfigError(f"mc.{key} must be a positive integer, got {mc[key]}")
        boundary = self.config["boundary"]
        coefficients = boundary["coefficients"]
        if not isinstance(coefficients, list) or not all(_is_number(c) for c in coefficients):
            raise ConfigError("boundary.coefficients must be a list of numbers")
        size = _PRESET_SIZES.get(boundary["kind"])
        if size is not None and len(coefficients) != size:
            raise ConfigError(
                f"A {boundary['kind']} boundary needs {size} coefficients, got {coefficients}"
            )
        if boundary["kind"] == "ou" and self._user_clock:
            raise ConfigError("An ou boundary brings its own clock, remove the clock section")
        self.build_propagator_config()

    def build_propagator_config(self) -> PropagatorConfig:
        try:
            return PropagatorConfig(**self.config["propagator"])
        except TypeError as error:
            raise ConfigError(f"Malformed propagator section: {error}")

    def horizon(self) -> float:
        """Working horizon of the clock: the configured one, else at least 10 and s_max."""
        horizon = self.config["clock"]["horizon"]
        if horizon is None and self.config["clock"]["kind"] != "tabulated":
            horizon = max(DEFAULT_HORIZON, float(self.config["grid"]["s_max"]))
        return horizon

    def build_model(self) -> Tuple[VolatilityClock, MovingBoundary]:
        """The clock and the boundary of the configuration.

        Raises:
            ConfigError: if the sections do not define a valid clock and boundary

        """
        boundary = self.config["boundary"]
        clock_section = self.config["clock"]
        kind = boundary["kind"]
        coefficients = [float(c) for c in boundary["coefficients"]]
        mode = boundary["derivative_mode"]
        try:
            if kind == "ou":
                clock, result = ou_to_martingale(
                    coefficients,
                    horizon=self.horizon(),
                    rate=boundary["ou_rate"],
                    sigma=boundary["ou_sigma"],
                )
                return clock, result.with_derivative_mode(mode)
            clock = VolatilityClock(
                kind=clock_section["kind"],
                sigma=clock_section["sigma"],
                rate=clock_section["rate"],
                exponent=clock_section["exponent"],
                times=clock_section["times"],
                values=clock_section["values"],
                horizon=self.horizon(),
            )
            if kind == "linear_in_variance":
                result = MovingBoundary.linear_in_variance(*coefficients, clock, mode)
            else:
                result = MovingBoundary.polynomial(coefficients, clock, kind, mode)
        except DomainError as error:
            raise ConfigError(f"Invalid clock or boundary: {error}")
        return clock, result

    def build_grid(self) -> np.ndarray:
        grid = self.config["grid"]
        s_min, s_max, n = float(grid["s_min"]), float(grid["s_max"]), int(grid["n"])
        if n == 1:
            return np.array([s_max])
        if grid["spacing"] == "log":
            return np.geomspace(s_min, s_max, n)
        return np.linspace(s_min, s_max, n)


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)
