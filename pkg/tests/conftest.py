import os
import shutil

import pytest

SCRATCH = "fptbridge_test_output"


@pytest.fixture(scope="class")
def scratch_dir(request):
    """Provide an empty output directory before and remove it after the TestCase."""
    shutil.rmtree(SCRATCH, ignore_errors=True)
    os.makedirs(SCRATCH)
    request.cls.scratch = SCRATCH
    yield
    shutil.rmtree(SCRATCH, ignore_errors=True)
