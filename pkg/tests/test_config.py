import pytest

from bcdiup.config import (
    config_fingerprint,
    default_config,
    derive_seed,
    load_config,
    parse_config,
)
from bcdiup.errors import ConfigError

FULL_DOC = """
seed = 21
output_dir = "runs/demo"

[crystal]
array_dims = [64, 64, 32]
box_dims = [10, 12, 8]
seed = 4
facet_cuts = [{normal = [1.0, 1.0, 0.0], offset = 6.5}]

[crystal.phase]
model = "linear-gradient"
amplitude = 0.5
length_scale = 4.0

[geometry]
roi_fine = 60
pbf = 5
scheme = "diagonal"
positions = 7

[recovery]
alpha = 1e-6
max_iterations = 1000
convergence_tol = 1e-9
normalize_slice = true
negative_handling = "keep"
solver = "admm"

[metrics]
floor = 1e-5
k_significant = 800

[recipe]
shrinkwrap_period = 20
shrinkwrap_sigma = 0.8
shrinkwrap_threshold = 0.15
stages = [
  {algorithm = "SF", iterations = 50},
  {algorithm = "HIO", iterations = 30, beta = 0.7},
  {algorithm = "ER", iterations = 10},
]
"""


class TestParsing:
    def test_full_document(self, tmp_path):
        path = tmp_path / "exp.toml"
        path.write_text(FULL_DOC)
        cfg = load_config(path)
        assert cfg.seed == 21
        assert cfg.crystal.array_dims == (64, 64, 32)
        assert cfg.crystal.seed == 4
        assert cfg.crystal.phase.kind == "linear-gradient"
        assert len(cfg.crystal.facet_cuts) == 1
        assert cfg.geometry.pbf == 5
        assert cfg.geometry.n_offsets == 7
        assert cfg.recovery.alpha == 1e-6
        assert cfg.recovery.negative_handling == "keep"
        assert cfg.solver == "admm"
        assert cfg.floor == 1e-5
        assert cfg.k_significant == 800
        assert cfg.recipe.stages[1].beta == 0.7
        assert cfg.recipe.shrinkwrap_period == 20
        assert cfg.output_dir == "runs/demo"

    def test_defaults(self):
        cfg = default_config()
        assert cfg.seed == 13
        assert cfg.crystal.seed == 13
        assert cfg.crystal.array_dims == (128, 128, 70)
        assert cfg.crystal.box_dims == (22, 24, 22)
        assert cfg.geometry.pbf == 6
        assert cfg.geometry.n_offsets == 12
        assert cfg.recovery.alpha == 2e-4
        assert cfg.recovery.max_iterations == 5000
        assert [s.algorithm for s in cfg.recipe.stages] == ["SF", "HIO", "SF", "ER"]
        assert [s.iterations for s in cfg.recipe.stages] == [400, 240, 400, 100]
        assert cfg.recipe.stages[1].beta == 0.8
        assert cfg.recipe.shrinkwrap_period == 25

    def test_crystal_seed_falls_back_to_master(self):
        cfg = parse_config({"seed": 77})
        assert cfg.crystal.seed == 77

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="mystery"):
            parse_config({"mystery": 1})

    def test_unknown_nested_key(self):
        with pytest.raises(ConfigError, match="typo"):
            parse_config({"recovery": {"typo": 2}})
        with pytest.raises(ConfigError, match="wat"):
            parse_config({"crystal": {"phase": {"wat": 1}}})

    def test_bad_enum_values(self):
        with pytest.raises(ConfigError):
            parse_config({"recovery": {"negative_handling": "clip"}})
        with pytest.raises(ConfigError):
            parse_config({"recovery": {"solver": "gradient"}})
        with pytest.raises(ConfigError):
            parse_config({"crystal": {"phase": {"model": "spiral"}}})

    def test_custom_geometry(self):
        cfg = parse_config({
            "geometry": {"roi_fine": 12, "pbf": 3, "scheme": "custom",
                         "offsets": [[0, 0], [1, 2]]},
        })
        assert cfg.geometry.offsets == [(0, 0), (1, 2)]
        with pytest.raises(ConfigError, match="offsets"):
            parse_config({"geometry": {"scheme": "custom"}})

    def test_indivisible_roi_rejected(self):
        with pytest.raises(ConfigError):
            parse_config({"geometry": {"roi_fine": 100, "pbf": 7}})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.toml")

    def test_invalid_toml(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("seed = [unterminated")
        with pytest.raises(ConfigError):
            load_config(path)


class TestSeedsAndFingerprint:
    def test_derive_seed_deterministic(self):
        assert derive_seed(13, "phasing") == derive_seed(13, "phasing")
        assert derive_seed(13, "phasing") != derive_seed(14, "phasing")
        assert derive_seed(13, "phasing") != derive_seed(13, "sweep")

    def test_fingerprint_stable_and_sensitive(self):
        a = default_config()
        b = default_config()
        assert config_fingerprint(a) == config_fingerprint(b)
        b.seed = 99
        assert config_fingerprint(a) != config_fingerprint(b)
