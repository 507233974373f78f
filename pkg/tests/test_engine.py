"""Vectorized engine vs the scalar reference path, and reproducibility."""

import numpy as np
import pytest

from chaoswalk.engine import LatticeEngine1D, run_walks
from chaoswalk.environment import Environment
from chaoswalk.experiment import Experiment
from chaoswalk.kernel import WalkState, default_kernel, make_kernel, step
from chaoswalk.maps import make_map, markov4, tripling


def scalar_positions(exp, n_steps, n_walks, tag="t", env_index=0):
    """Reference implementation: dict environment + per-walk scalar steps."""
    env = Environment(
        exp.map, exp.env_seed(env_index), 1, exp.sampler, backend=exp.backend
    )
    walks = [
        WalkState(
            position=(0,),
            rng=np.random.default_rng(exp.walk_seed(tag, env_index, w)),
        )
        for w in range(n_walks)
    ]
    out = np.empty((n_steps + 1, n_walks), dtype=np.int64)
    out[0] = 0
    for t in range(n_steps):
        for w, walk in enumerate(walks):
            step(exp.kernel, env, walk)
            out[t + 1, w] = walk.position[0]
        env.advance()
    return out


@pytest.mark.parametrize("eps", [0.0, 0.05, 0.4])
def test_engine_bit_equal_to_scalar_path(eps):
    exp = Experiment(map=markov4(), kernel=default_kernel(eps), seed=42)
    ref = scalar_positions(exp, 50, 3)
    res = run_walks(exp, 50, 3, tag="t", record_positions=True)
    assert (res["positions"] == ref).all()


def test_engine_bit_equal_on_float_backend():
    exp = Experiment(map=tripling(), kernel=default_kernel(0.1), seed=9,
                     backend="float")
    ref = scalar_positions(exp, 40, 2)
    res = run_walks(exp, 40, 2, tag="t", record_positions=True)
    assert (res["positions"] == ref).all()


def test_exact_and_float_backends_agree_initially():
    # identical for short horizons; orbit roundoff eventually separates them
    ke = Experiment(map=markov4(), kernel=default_kernel(0.05), seed=3)
    kf = Experiment(map=markov4(), kernel=default_kernel(0.05), seed=3,
                    backend="float")
    re_ = run_walks(ke, 12, 4, tag="t", record_positions=True)["positions"]
    rf = run_walks(kf, 12, 4, tag="t", record_positions=True)["positions"]
    assert (re_ == rf).all()


def test_run_is_deterministic():
    exp = Experiment(map=markov4(), kernel=default_kernel(0.05), seed=1)
    a = run_walks(exp, 64, 8, tag="x", record_increments=True)
    b = run_walks(exp, 64, 8, tag="x", record_increments=True)
    assert (a["final"] == b["final"]).all()
    assert (a["increments"] == b["increments"]).all()
    c = run_walks(exp, 64, 8, tag="y", record_increments=True)
    assert (a["increments"] != c["increments"]).any()


def test_records_are_consistent():
    exp = Experiment(map=markov4(), kernel=default_kernel(0.05), seed=4)
    res = run_walks(
        exp, 30, 5, tag="t", record_positions=True, record_increments=True,
        record_drift=True,
    )
    pos, inc = res["positions"], res["increments"]
    assert (np.diff(pos, axis=0) == inc).all()
    assert (res["final"] == pos[-1]).all()
    assert res["drift"].shape == (30, 5)
    assert (np.abs(res["drift"]) <= 1.0).all()
    assert res["time"] == 30


def test_iid_drift_record_is_constant():
    k = make_kernel({"support": [-1, 1], "base_weights": [0.3, 0.7]}, 1)
    exp = Experiment(map=markov4(), kernel=k, seed=0)
    res = run_walks(exp, 10, 3, tag="t", record_drift=True)
    assert np.allclose(res["drift"], 0.4, atol=1e-15)


def test_start_positions_and_lazy_extension():
    exp = Experiment(map=markov4(), kernel=default_kernel(0.05), seed=6)
    res = run_walks(
        exp, 40, 2, tag="t", start_positions=[0, 1000], record_positions=True
    )
    pos = res["positions"]
    assert pos[0, 0] == 0 and pos[0, 1] == 1000
    # the far walk evolves exactly as it would alone (lazy segments for
    # disjoint regions must not interact)
    solo = run_walks(
        exp, 40, 2, tag="t", start_positions=[990, 1000], record_positions=True
    )
    assert (solo["positions"][:, 1] == pos[:, 1]).all()


def test_shadow_walk_coupling():
    # eps=0: the shadow is driven by the very same thresholds, so it
    # coincides with the walk step for step
    e0 = Experiment(map=tripling(), kernel=default_kernel(0.0), seed=3)
    out = run_walks(e0, 300, 16, tag="t", record_shadow=True)
    assert (out["shadow_final"] == out["final"]).all()
    # eps>0: the shadow is the base-weight walk read off the same
    # uniform stream, independent of the environment
    exp = Experiment(map=tripling(), kernel=default_kernel(0.05), seed=3)
    out = run_walks(exp, 300, 16, tag="t", record_shadow=True)
    disp = exp.kernel.support_array[:, 0]
    base_cum = np.cumsum(exp.kernel.base_weights)[:-1]
    for w in range(16):
        u = np.random.default_rng(exp.walk_seed("t", 0, w)).random(300)
        idx = np.searchsorted(base_cum, u, side="right")
        assert disp[idx].sum() == out["shadow_final"][w]
    # maximal per-step coupling keeps the pair far tighter than sqrt(N)
    diff = out["final"] - out["shadow_final"]
    assert np.abs(diff).max() < 0.5 * np.sqrt(300)


def test_engine_rejects_unsupported_setups():
    exp = Experiment(map=markov4(), kernel=default_kernel(0.05), seed=0)
    with pytest.raises(ValueError):
        LatticeEngine1D(
            exp.map,
            make_kernel(
                {
                    "support": [[1, 0], [-1, 0], [0, 1], [0, -1]],
                    "base_weights": [0.25] * 4,
                },
                2,
            ),
            exp.sampler,
            env_seed=0,
            walk_seeds=[1],
        )
    steep = make_map(
        {
            "branches": [
                {"domain": [0, 0.25], "slope": 4, "offset": 0},
                {"domain": [0.25, 0.5], "slope": 4, "offset": 1},
                {"domain": [0.5, 0.75], "slope": 4, "offset": 2},
                {"domain": [0.75, 1], "slope": 4, "offset": 3},
            ]
        }
    )
    with pytest.raises(ValueError):
        LatticeEngine1D(
            steep, exp.kernel, exp.sampler, env_seed=0, walk_seeds=[1],
            backend="exact",
        )
    # float backend accepts the same map
    eng = LatticeEngine1D(
        steep, exp.kernel, exp.sampler, env_seed=0, walk_seeds=[1],
        backend="float",
    )
    eng.run(5)


def test_environment_sites_advance_with_walks():
    exp = Experiment(map=markov4(), kernel=default_kernel(0.05), seed=12)
    eng = LatticeEngine1D(
        exp.map, exp.kernel, exp.sampler,
        env_seed=exp.env_seed(0), walk_seeds=[exp.walk_seed("t", 0, 0)],
    )
    eng.run(25)
    env = Environment(exp.map, exp.env_seed(0), 1, exp.sampler)
    for _ in range(25):
        env.advance()
    q = int(eng.pos[0])
    assert eng.sites[q - eng.lo] == env.site_state(q)
