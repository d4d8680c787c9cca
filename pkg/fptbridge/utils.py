import os
import csv
import json
import logging
from glob import glob
from hashlib import sha256
from base64 import b32encode
from collections.abc import Mapping
from importlib.resources import files as _files
from typing import Any, Dict, Iterable, List, Optional, Sequence

import yaml
import numpy as np

logging.basicConfig(level=logging.INFO)


CSV_FLOAT_FORMAT = "{:.17g}"


class FptError(Exception):
    """Base class of all errors raised by fptbridge."""


class DomainError(FptError, ValueError):
    """An argument lies outside the domain of the operation."""


class SingularClockError(DomainError):
    """The volatility vanishes where its inverse square is needed."""


class UnsupportedStartError(DomainError):
    """The boundary does not start strictly above the process."""


class GridError(DomainError):
    """A finite-difference grid touches a singular line of the kernel."""


class ConfigError(FptError, ValueError):
    """The run configuration is malformed."""


class NumericalError(FptError, RuntimeError):
    """A numerical procedure failed."""


class QuadratureError(NumericalError):
    """Adaptive quadrature did not reach the requested tolerance.

    Attributes:
        lo (float): lower integration limit
        hi (float): upper integration limit
        estimate (float): last estimate of the integral
        abserr (float): estimated absolute error of the last estimate

    """

    def __init__(self, message: str, lo: float, hi: float, estimate: float, abserr: float):
        super().__init__(f"{message} on [{lo}, {hi}]: estimate {estimate}, abserr {abserr}")
        self.lo = lo
        self.hi = hi
        self.estimate = estimate
        self.abserr = abserr


class ConvergenceError(NumericalError):
    """An iterative refinement did not settle.

    Attributes:
        diagnostics (dict): values collected during the refinement

    """

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics if diagnostics else {}


class IllPosedBoundaryError(NumericalError):
    """The boundary produces non-finite derived quantities."""


class StepSizeError(NumericalError):
    """A time-stepping sampler could not produce an admissible step."""


class SolverError(NumericalError):
    """A linear or PDE solve failed."""


class FptWarning(UserWarning):
    """Base class of the numerical warnings emitted by fptbridge."""


class DegenerateIntervalWarning(FptWarning):
    """The clock variance between two times is below resolution."""


class ShiftedDomainWarning(FptWarning):
    """Gauge-shifted coordinates left the positive half-line."""


class HypothesisViolatedWarning(FptWarning):
    """beta' is negative somewhere on the horizon."""


class ClampedExpectationWarning(FptWarning):
    """A bridge expectation exceeded one and was clamped."""


class MassDeficitWarning(FptWarning):
    """A density curve carries noticeably less than unit mass."""


WARNING_TAGS = {
    DegenerateIntervalWarning: "degenerate_interval",
    ShiftedDomainWarning: "shifted_domain",
    HypothesisViolatedWarning: "beta_prime_negative",
    ClampedExpectationWarning: "clamped",
    MassDeficitWarning: "mass_deficit",
}


class ReadOnly:
    """Mixin making attributes read-only once ``_freeze`` was called."""

    _frozen = False

    def _freeze(self):
        object.__setattr__(self, "_frozen", True)

    def __setattr__(self, key, value):
        if self._frozen:
            raise TypeError(
                f"{self.__class__.__name__} is read-only, "
                "please initialize a new one in order to change it."
            )
        object.__setattr__(self, key, value)

    def __delattr__(self, key):
        raise TypeError(
            f"{self.__class__.__name__} is read-only, "
            "please initialize a new one in order to change it."
        )


def load_yaml(file_name: str):
    """Load data from yaml file."""
    with open(get_file_path(file_name), "r") as file:
        data = yaml.safe_load(file)
    return data


def load_json(file_name: str):
    """Load data from json file."""
    with open(get_file_path(file_name), "r") as file:
        data = json.load(file)
    return data


def dump_json(file_name: str, data: dict):
    """Dump data to a json file."""
    with open(file_name, "w") as file:
        json.dump(data, file, indent=4)
        file.write("\n")


def format_float(value: float) -> str:
    """Format a float with 17 significant digits, enough to round-trip a double."""
    return CSV_FLOAT_FORMAT.format(float(value))


def dump_csv(file_name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]):
    """Dump rows to a csv file, floats written with 17 significant digits."""
    with open(file_name, "w", newline="") as file:
        writer = csv.writer(file)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [format_float(v) if isinstance(v, (float, np.floating)) else v for v in row]
            )


def load_csv(file_name: str) -> List[Dict[str, str]]:
    """Load a csv file written by dump_csv as a list of dicts of strings."""
    with open(file_name, "r", newline="") as file:
        return list(csv.DictReader(file))


def _get_internal(file_name):
    """Get the abspath of the file.

    Raise FileNotFoundError when not found in any subfolder

    """
    for sub_dir in ("examples/configs",):
        p = os.path.join(_package_path(sub_dir), file_name)
        if glob(p):
            return p
    raise FileNotFoundError(f"Cannot find {file_name}")


def _package_path(sub_directory):
    """Get the abs path of the requested sub folder."""
    return _files("fptbridge") / sub_directory


def get_file_path(fname, folder_list: Optional[List[str]] = None):
    """Find the full path to the resource file Try 3 methods in the following order.

    #. fname exists or begins with '/', return it
    #. fname exists under one of the folders in folder_list, return folder + name
    #. fname is shipped in fptbridge/examples/configs, return its internal path

    Args:
        fname (str): file name
        folder_list (list, optional (default=None)):
            list of possible base folders. Ordered by priority.

    Returns:
        str: full path to the resource file

    Raises:
        FileNotFoundError: if the file can not be found anywhere

    """
    if os.path.exists(fname):
        return fname

    if folder_list is None:
        folder_list = []
    if fname.startswith("/"):
        return fname

    for folder in folder_list:
        fpath = os.path.join(folder, fname)
        if os.path.exists(fpath):
            logging.info(f"Load {fname} successfully from {fpath}")
            return fpath

    try:
        return _get_internal(fname)
    except FileNotFoundError:
        pass

    raise FileNotFoundError(f"Can not find {fname}, please check your file system")


def make_hashable(obj):
    """Convert a container hierarchy into one that can be hashed.

    See http://stackoverflow.com/questions/985294

    """
    if isinstance(obj, Mapping):
        obj = dict(obj)
    try:
        hash(obj)
    except TypeError:
        if isinstance(obj, dict):
            return tuple((k, make_hashable(v)) for (k, v) in sorted(obj.items()))
        elif isinstance(obj, np.ndarray):
            return tuple(obj.tolist())
        elif hasattr(obj, "__iter__"):
            return tuple(make_hashable(o) for o in obj)
        else:
            raise TypeError("Can't make_hashable object of type %r" % type(obj))
    else:
        return obj


def deterministic_hash(thing, length=10):
    """Return a base32 lowercase string of length determined from hashing a container
    hierarchy."""
    hashable = make_hashable(thing)
    jsonned = json.dumps(hashable)
    digest = sha256(jsonned.encode("ascii")).digest()
    return b32encode(digest)[:length].decode("ascii").lower()


def fd_step(u, order: int = 5) -> np.ndarray:
    """Finite-difference step eps^(1/order) * max(1, |u|)."""
    eps = np.finfo(float).eps
    return eps ** (1.0 / order) * np.maximum(1.0, np.abs(u))


def five_point_derivative(fn, u, lower: Optional[float] = 0.0) -> np.ndarray:
    """First derivative of a vectorized function by five-point stencils.

    Central stencils are used where the stencil stays above ``lower``; the one-sided forward
    stencil of the same order is used otherwise.

    Args:
        fn (callable): vectorized function of one variable
        u (float or array): evaluation points
        lower (float, optional (default=0.0)): left end of the domain of fn, None for none

    """
    shape = np.shape(u)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    d = fd_step(u)
    if lower is None:
        near = np.zeros(u.shape, dtype=bool)
    else:
        near = u - 2 * d < lower
    result = np.empty(u.shape, dtype=float)
    far = ~near
    if np.any(far):
        uf, df = u[far], d[far]
        result[far] = (-fn(uf + 2 * df) + 8 * fn(uf + df) - 8 * fn(uf - df) + fn(uf - 2 * df)) / (
            12 * df
        )
    if np.any(near):
        un, dn = u[near], d[near]
        result[near] = (
            -25 * fn(un)
            + 48 * fn(un + dn)
            - 36 * fn(un + 2 * dn)
            + 16 * fn(un + 3 * dn)
            - 3 * fn(un + 4 * dn)
        ) / (12 * dn)
    return result.reshape(shape)
