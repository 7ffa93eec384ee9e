import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ngnf import config as kv
from ngnf.config import IntegratorConfig, RunConfig, benes_config
from ngnf.errors import ConfigError
from ngnf.flow import FlowConfig

REPO_CONFIGS = __import__("pathlib").Path(__file__).resolve().parent.parent / "configs"


class TestKeyValue:
    def test_canonical_form(self):
        text = kv.dumps({"b.x": 1, "a": 0.1, "c": "hi", "d": [1.0, 2.5], "e": True, "skip": None})
        assert text == 'a = 0.1\nb.x = 1\nc = "hi"\nd = [1.0, 2.5]\ne = true\n'

    @settings(max_examples=100, deadline=None)
    @given(
        st.dictionaries(
            st.from_regex(r"[a-z]{1,5}(\.[a-z]{1,5})?", fullmatch=True),
            st.one_of(st.integers(-(2**60), 2**60), st.floats(allow_nan=False), st.text(max_size=10), st.booleans()),
            max_size=6,
        )
    )
    def test_roundtrip(self, flat):
        # a key cannot be both a leaf and a table
        keys = set(flat)
        flat = {k: v for k, v in flat.items() if not any(o.startswith(k + ".") for o in keys)}
        assert kv.loads(kv.dumps(flat)) == flat

    def test_float_bits(self):
        vals = [1.0 / 3.0, 1e-300, 2.0**-1074, 6.02214076e23]
        back = kv.loads(kv.dumps({"v": vals}))["v"]
        assert np.array(back).tobytes() == np.array(vals).tobytes()

    def test_non_finite(self):
        assert math.isinf(kv.loads(kv.dumps({"a": float("-inf")}))["a"])

    def test_malformed(self):
        with pytest.raises(ConfigError):
            kv.loads("a = = 1")

    def test_section(self):
        assert kv.section({"flow.layers": 4, "flowx": 1, "galerkin.seed": 2}, "flow") == {"layers": 4}

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            kv.load(tmp_path / "none.toml")


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig.from_flat({})
        assert cfg.model == "benes_rot" and cfg.T == 3.0
        assert cfg.integrator.t_start == pytest.approx(3e-3)
        assert cfg.integrator.t_end == 3.0
        assert cfg.galerkin.seed == cfg.seed

    def test_benes_config(self):
        # [PAPER] architecture, sampling law N(0, 0.75^2 I), horizon [0, 3], rotation pi/3
        cfg = benes_config()
        assert cfg.T == 3.0 and cfg.s == 0.0
        assert cfg.flow == FlowConfig(dim=2, layers=10, split=1, beta=0.9, hidden=4)
        assert cfg.galerkin.n_samples == 2000 and cfg.galerkin.mu_std == 0.75
        assert cfg.model_params["angle"] == pytest.approx(math.pi / 3)

    def test_shipped_configs(self):
        assert RunConfig.load(REPO_CONFIGS / "benes.toml") == benes_config()
        bm = RunConfig.load(REPO_CONFIGS / "brownian.toml")
        assert bm.build_model().name == "brownian"

    def test_flat_roundtrip(self):
        cfg = benes_config(**{"horizon.s": 0.5, "horizon.T": 2.0, "seed": 9, "galerkin.ridge": 1e-4})
        again = RunConfig.from_flat(kv.loads(kv.dumps(cfg.to_flat())))
        assert again == cfg
        assert cfg.integrator.t_end == 1.5

    def test_seed_propagates(self):
        assert RunConfig.from_flat({"seed": 4}).galerkin.seed == 4
        assert RunConfig.from_flat({"seed": 4, "galerkin.seed": 1}).galerkin.seed == 1

    @pytest.mark.parametrize(
        "flat",
        [
            {"flow.layres": 4},
            {"colour": "red"},
            {"horizon.T": -1.0},
            {"horizon.s": 2.0, "horizon.T": 1.0},
            {"integrator.t_end": 2.0},
            {"integrator.rtol": 0.0},
            {"flow.layers": 3},
            {"galerkin.n_samples": -5},
        ],
    )
    def test_invalid(self, flat):
        with pytest.raises(ConfigError):
            RunConfig.from_flat(flat)

    def test_unknown_model(self):
        with pytest.raises(ConfigError):
            RunConfig.from_flat({"model.name": "lorenz"}).build_model()

    def test_integrator_invariants(self):
        with pytest.raises(ConfigError):
            IntegratorConfig(h_min=1e-2, h_init=1e-3)
        with pytest.raises(ConfigError):
            IntegratorConfig(t_start=0.0)
        with pytest.raises(ConfigError):
            IntegratorConfig(checkpoint_stride=0)
