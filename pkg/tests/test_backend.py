import subprocess
import sys

import pytest

from mgsolve import _backend


def test_available_always_has_fallback():
    assert "python" in _backend.available()


def test_use_switches_and_returns_previous():
    prev = _backend.use("python")
    try:
        assert _backend.current() == "python"
    finally:
        _backend.use(prev)
    with pytest.raises(ValueError):
        _backend.use("fortran")


@pytest.mark.parametrize("env,expected", [({"MGSOLVE_BACKEND": "python"}, "python")])
def test_environment_selects_backend(env, expected):
    out = subprocess.run([sys.executable, "-c", "from mgsolve import _backend; print(_backend.current())"],
                         env={**__import__("os").environ, **env}, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected


def test_thread_setting_is_clamped():
    _backend.set_threads(-4)
    assert _backend.num_threads == 0
    _backend.set_threads(0)
