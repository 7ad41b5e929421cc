import pytest

from connlatent.classifiers.selection import PAPER_C, PAPER_GAMMA
from connlatent.config import (PRESETS, PipelineConfig, build_config, parse_overrides,
                               parse_text, parse_value)
from connlatent.errors import ConfigError, ParseError


class TestParsing:
    def test_types_follow_fields(self):
        assert parse_value("dvae.epochs", " 12 ") == 12
        assert parse_value("dvae.learning_rate", "5e-4") == 5e-4
        assert parse_value("harmonize.enabled", "off") is False
        assert parse_value("grid.svm_C", "0.1, 1,10") == (0.1, 1.0, 10.0)
        assert parse_value("classify.models", "svm") == ("svm",)

    def test_comments_and_blank_lines(self):
        text = "# header\n\nseed = 4  # trailing\neval.k=3\n"
        assert parse_text(text) == {"seed": 4, "eval.k": 3}

    def test_error_reports_line(self):
        with pytest.raises(ParseError) as info:
            parse_text("seed = 1\ndvae.epochs = many\n", path="c.cfg")
        assert info.value.line == 2
        assert "c.cfg" in str(info.value)

    def test_missing_equals(self):
        with pytest.raises(ParseError):
            parse_text("seed 1\n")

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            parse_value("dvae.depth", "3")

    def test_bad_override(self):
        with pytest.raises(ConfigError):
            parse_overrides(["seed"])

    def test_round_trip(self):
        cfg = PipelineConfig(seed=7, svm_C=(0.5, 2.0), augment_covariates=("age",))
        assert build_config(overrides=parse_text(cfg.to_text())) == cfg


class TestValidation:
    @pytest.mark.parametrize("changes", [
        {"k": 1}, {"test_fraction": 1.0}, {"bootstrap": 50}, {"models": ("svm", "svm")},
        {"models": ("knn",)}, {"svm_C": ()}, {"svm_gamma": (0.0,)}, {"harmonize_fit_on": "test"},
        {"learning_rate": 0.0}, {"latent_dim": 0}])
    def test_rejects(self, changes):
        with pytest.raises(ConfigError):
            PipelineConfig(**changes)

    def test_bootstrap_off(self):
        assert PipelineConfig(bootstrap=0).bootstrap == 0


class TestPrecedence:
    def test_layers(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("eval.k = 4\ndvae.epochs = 10\n")
        cfg = build_config("paper-raw", path, {"dvae.epochs": 20}, env={})
        assert cfg.use_dvae is False
        assert cfg.k == 4 and cfg.epochs == 20

    def test_env_seed_is_lowest(self, tmp_path):
        assert build_config(env={"CONNLATENT_SEED": "9"}).seed == 9
        assert build_config(overrides={"seed": 2}, env={"CONNLATENT_SEED": "9"}).seed == 2
        path = tmp_path / "c.cfg"
        path.write_text("seed = 3\n")
        assert build_config(config_path=path, env={"CONNLATENT_SEED": "9"}).seed == 3

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            build_config("paper-huge")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            build_config(config_path=tmp_path / "absent.cfg")


class TestPresets:
    def test_latent_preset(self):
        cfg = build_config("paper-latent", env={})
        assert cfg.use_dvae and cfg.latent_dim == 5 and cfg.noise_variance == 0.1
        assert cfg.k == 5 and cfg.test_fraction == 0.2
        assert cfg.svm_C == PAPER_C and cfg.svm_gamma == PAPER_GAMMA
        assert cfg.bootstrap == 1000 and cfg.permutations == 1000
        assert len(cfg.grid().svm_C) * (1 + len(cfg.grid().svm_gamma)) == 30

    def test_covariate_variants(self):
        assert build_config("paper-latent-age-sex", env={}).augment_covariates == ("age", "sex")
        assert build_config("paper-latent-age", env={}).augment_covariates == ("age",)
        assert build_config("paper-latent-sex", env={}).augment_covariates == ("sex",)

    def test_all_presets_valid(self):
        for name in PRESETS:
            build_config(name, env={})
