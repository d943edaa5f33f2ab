import os
import subprocess
import sys

import pytest

from cgmc import kernels


def backend_in_subprocess(value):
    env = dict(os.environ, CGMC_BACKEND=value)
    out = subprocess.run(
        [sys.executable, "-c", "import cgmc; print(cgmc.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    return out.stdout.strip()


def test_environment_forces_python_fallback():
    assert backend_in_subprocess("python") == "python"


@pytest.mark.skipif("cython" not in kernels.BACKENDS, reason="compiled backend not built")
def test_compiled_backend_preferred():
    assert backend_in_subprocess("") == "cython"
    assert kernels.BACKEND == "cython"


def test_unknown_backend_name_rejected():
    with pytest.raises(ValueError):
        kernels.get("fortran")


def test_both_backends_expose_the_same_entry_points():
    for mod in kernels.BACKENDS.values():
        assert callable(mod.classical_block) and callable(mod.coupled_block)
