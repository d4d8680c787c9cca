import os
import warnings
from unittest import TestCase

import numpy as np
import pytest

from fptbridge.utils import (
    WARNING_TAGS,
    DomainError,
    FptWarning,
    QuadratureError,
    ReadOnly,
    deterministic_hash,
    dump_csv,
    dump_json,
    five_point_derivative,
    format_float,
    get_file_path,
    load_csv,
    load_json,
    load_yaml,
)


class Frozen(ReadOnly):
    def __init__(self):
        self.value = 1.0
        self._freeze()


@pytest.mark.usefixtures("scratch_dir")
class TestUtils(TestCase):
    """Test of the fptbridge.utils."""

    def test_deterministic_hash(self):
        """Test of the deterministic_hash function."""
        self.assertEqual(deterministic_hash([0, 1]), "si3ifpvg2u")
        self.assertEqual(deterministic_hash(np.array([0, 1])), "si3ifpvg2u")
        self.assertEqual(deterministic_hash({"a": 1, "b": 2}), "shhkapn4q7")
        self.assertEqual(
            deterministic_hash({"a": np.array([0, 1]), "b": np.array([0, 1])}), "anxefavaju"
        )

    def test_get_file_path(self):
        """Test of the get_file_path function."""
        path = get_file_path("constant.yaml")
        self.assertTrue(os.path.exists(path))
        self.assertEqual(get_file_path("/not/a/file.yaml"), "/not/a/file.yaml")
        with self.assertRaises(FileNotFoundError):
            get_file_path("not_shipped.yaml")

    def test_load_yaml(self):
        """Test of the load_yaml function on a shipped configuration."""
        data = load_yaml("quadratic.yaml")
        self.assertEqual(data["boundary"]["coefficients"], [1.0, 0.0, 1.0])

    def test_dump_json(self):
        """Test of the dump_json and load_json functions."""
        file_name = os.path.join(self.scratch, "data.json")
        dump_json(file_name, {"a": [1, 2], "b": "c"})
        self.assertEqual(load_json(file_name), {"a": [1, 2], "b": "c"})

    def test_dump_csv(self):
        """Test of the dump_csv function, floats keep 17 significant digits."""
        file_name = os.path.join(self.scratch, "data.csv")
        value = 1.0 / 3.0
        dump_csv(file_name, ["s", "value", "warnings"], [(0.5, value, ""), (1.0, 2.0, "clamped")])
        rows = load_csv(file_name)
        self.assertEqual(len(rows), 2)
        self.assertEqual(float(rows[0]["value"]), value)
        self.assertEqual(rows[0]["value"], format_float(value))
        self.assertEqual(rows[1]["warnings"], "clamped")

    def test_read_only(self):
        """Test of the ReadOnly mixin."""
        frozen = Frozen()
        with self.assertRaises(TypeError):
            frozen.value = 2.0
        with self.assertRaises(TypeError):
            del frozen.value
        self.assertEqual(frozen.value, 1.0)

    def test_five_point_derivative(self):
        """Test of the five_point_derivative function, central and one-sided."""
        u = np.array([0.0, 1e-6, 0.5, 2.0])
        derivative = five_point_derivative(np.sin, u)
        np.testing.assert_allclose(derivative, np.cos(u), rtol=1e-9, atol=1e-9)
        self.assertEqual(np.shape(five_point_derivative(np.exp, 1.0)), ())

    def test_exceptions(self):
        """Test of the exception hierarchy."""
        self.assertTrue(issubclass(DomainError, ValueError))
        error = QuadratureError("Quadrature failed", 0.0, 1.0, 0.5, 1e-3)
        self.assertEqual(error.abserr, 1e-3)
        self.assertIn("[0.0, 1.0]", str(error))
        for category, tag in WARNING_TAGS.items():
            self.assertTrue(issubclass(category, FptWarning))
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                warnings.warn(tag, category)
            self.assertEqual(caught[0].category, category)
