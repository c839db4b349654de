"""Shared fixtures: one desk-scale forward run and its inference, built once."""

import time
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import settings

from tdcgl.cli import g_table_for
from tdcgl.forward import IntensityTriple, evolve_snapshots, init_phase, initial_field
from tdcgl.inference import infer
from tdcgl.io import RunConfig

settings.register_profile("tdcgl", deadline=None, max_examples=40)
settings.load_profile("tdcgl")


@dataclass
class DeskRun:
    config: RunConfig
    triple: IntensityTriple
    phases: list
    seconds: float

    @property
    def truth_z1(self):
        return 0.5 * (self.phases[0] + self.phases[1])

    @property
    def truth_z3(self):
        return 0.5 * (self.phases[1] + self.phases[2])


@pytest.fixture(scope="session")
def desk_config():
    return RunConfig()


@pytest.fixture(scope="session")
def desk_run(desk_config):
    cfg = desk_config
    start = time.perf_counter()
    grid, ic = cfg.grid(), cfg.initial_condition()
    _, intensities, phases, _ = evolve_snapshots(initial_field(ic, grid), cfg.model(), cfg.plan(),
                                                 init_phase(ic, grid))
    triple = IntensityTriple(*intensities[:3], cfg.plan().dz_plane)
    return DeskRun(cfg, triple, phases[:3], time.perf_counter() - start)


@pytest.fixture(scope="session")
def desk_g_table(desk_config):
    start = time.perf_counter()
    table = g_table_for(desk_config)
    return table, time.perf_counter() - start


@pytest.fixture(scope="session")
def desk_inference(desk_run, desk_g_table):
    table, _ = desk_g_table
    start = time.perf_counter()
    res = infer(desk_run.triple, table.as_function(), desk_run.config.relaxation())
    return res, time.perf_counter() - start


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
