"""Smoke test for the phmor_py extension module."""

import json
import math
import pathlib
import tempfile

import pytest

import phmor_py


def test_advection_diffusion_shapes():
    times, states = phmor_py.advection_diffusion(n=49, t_end=0.1, step=1e-2)
    assert len(times) == 11
    assert len(states) == 11
    assert all(len(x) == 51 for x in states)
    assert all(math.isfinite(v) for x in states for v in x)


def test_relative_error():
    times, states = phmor_py.advection_diffusion(n=19, t_end=0.05, step=1e-2)
    assert phmor_py.relative_l2_error(times, states, states) == 0.0
    scaled = [[1.1 * v for v in x] for x in states]
    assert abs(phmor_py.relative_l2_error(times, states, scaled) - 0.1) < 1e-12


def test_pipeline_command_and_errors():
    with tempfile.TemporaryDirectory() as d:
        cfg = pathlib.Path(d) / "c.toml"
        cfg.write_text('[models]\nkind = "ade"\n[models.ade]\nn = 49\nt_end = 0.2\n')
        summary = json.loads(phmor_py.run("fom-run", str(cfg), out=str(pathlib.Path(d) / "o")))
        assert summary["samples"] == 201
        assert summary["dim"] == 51
        with pytest.raises(ValueError):
            phmor_py.run("fom-run", str(cfg), step_size=-1.0)
        with pytest.raises(FileNotFoundError):
            phmor_py.run("diag", str(cfg), out=str(pathlib.Path(d) / "empty"))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
