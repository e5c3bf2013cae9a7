"""Tests for configuration management."""

import pytest
import yaml
from pathlib import Path

from config.config_manager import (
    ConfigManager,
    GeometryConfig,
    SolverConfig,
    get_config_manager,
    parse_assignments,
    reset_config_manager,
)


class TestConfigManager:
    """Test suite for ConfigManager."""

    @pytest.fixture
    def config_path(self, tmp_path):
        return tmp_path / "settings.yaml"

    @pytest.fixture
    def manager(self, config_path, monkeypatch):
        for key in ("ELAB_THREADS", "ELAB_SOLVER__TOLERANCE", "ELAB_GEOMETRY__RESOLUTION"):
            monkeypatch.delenv(key, raising=False)
        return ConfigManager(config_path)

    def test_defaults_loaded_and_saved(self, manager, config_path):
        """Bundled defaults are used and written when no user file exists."""
        assert config_path.exists()
        assert manager.get_config('geometry', 'kind') == 'square'
        assert manager.get_config('solver', 'krylov') == 'gmres'
        assert manager.get_config('sfnt', 'q') == 2.0

    def test_user_file_merged_over_defaults(self, config_path):
        config_path.write_text(yaml.safe_dump({'geometry': {'resolution': 33}}))

        manager = ConfigManager(config_path)

        assert manager.get_config('geometry', 'resolution') == 33
        # untouched keys keep their defaults
        assert manager.get_config('geometry', 'dim') == 2

    def test_get_config_section(self, manager):
        section = manager.get_config('whitney')
        assert set(section) == {'whitney_ratio', 'fattening', 'cdc_samples', 'tuning_limit',
                                'strict_tuning'}

    def test_get_config_missing_key(self, manager):
        with pytest.raises(KeyError):
            manager.get_config('geometry', 'missing')
        with pytest.raises(KeyError):
            manager.get_config('missing')

    def test_dataclass_accessors(self, manager):
        geometry = manager.get_geometry_config()
        solver = manager.get_solver_config()

        assert isinstance(geometry, GeometryConfig)
        assert isinstance(solver, SolverConfig)
        assert solver.tolerance == pytest.approx(1e-10)
        assert manager.get_perturbation_config().rh_exponents == [1.5, 2.0, 3.0]

    def test_env_override(self, config_path, monkeypatch):
        monkeypatch.setenv('ELAB_SOLVER__TOLERANCE', '1e-12')

        manager = ConfigManager(config_path)

        assert manager.get_config('solver', 'tolerance') == pytest.approx(1e-12)

    def test_threads_shorthand(self, config_path, monkeypatch):
        monkeypatch.setenv('ELAB_THREADS', '3')

        manager = ConfigManager(config_path)

        assert manager.get_lab_config().threads == 3
        assert manager.worker_count() == 3

    def test_worker_count_defaults_to_cpus(self, manager):
        manager.set_config('lab', 'threads', 0)
        assert manager.worker_count() >= 1

    def test_apply_overrides(self, manager):
        manager.apply_overrides(['geometry.resolution=129', 'experiment.sweep=[0.0, 0.5, 1.0]',
                                 'experiment.kind=blend'])

        assert manager.get_config('geometry', 'resolution') == 129
        assert manager.get_config('experiment', 'sweep') == [0.0, 0.5, 1.0]
        assert manager.get_experiment_config().kind == 'blend'

    def test_override_validation(self, manager):
        with pytest.raises(ValueError, match="must be <="):
            manager.apply_overrides(['geometry.dim=4'])
        with pytest.raises(ValueError, match="section.key=value"):
            manager.apply_overrides(['geometry.dim'])
        with pytest.raises(ValueError, match="Unknown configuration section"):
            manager.apply_overrides(['network.port=1'])

    def test_whitney_ratio_bracket(self, manager):
        with pytest.raises(ValueError, match="must be >= 4"):
            manager.apply_overrides(['whitney.whitney_ratio=2'])
        with pytest.raises(ValueError, match="must be <= 40"):
            manager.apply_overrides(['whitney.whitney_ratio=64'])

    def test_validation_invalid_type(self, config_path):
        config_path.write_text(yaml.safe_dump({'geometry': {'resolution': 'many'}}))

        with pytest.raises(ValueError, match="must be of type"):
            ConfigManager(config_path)

    def test_validation_unknown_krylov(self, manager):
        with pytest.raises(ValueError, match="krylov"):
            manager.apply_overrides(['solver.krylov=cg'])

    def test_validation_rh_exponent(self, manager):
        with pytest.raises(ValueError, match="rh_exponents"):
            manager.apply_overrides(['perturbation.rh_exponents=[1.0, 2.0]'])

    def test_int_accepted_for_float(self, manager):
        manager.apply_overrides(['sfnt.q=3'])
        assert manager.get_sfnt_config().q == 3.0
        assert isinstance(manager.get_sfnt_config().q, float)

    def test_flat_scenario_file(self, config_path, tmp_path):
        scenario = tmp_path / "scenario.txt"
        scenario.write_text(
            "# sweep of bump amplitudes\n"
            "experiment.kind = epsilon_sweep\n"
            "experiment.sweep = [0.0, 0.1]\n"
            "geometry.resolution = 33   # coarse\n"
        )

        manager = ConfigManager(config_path, scenario_path=scenario)

        assert manager.get_config('geometry', 'resolution') == 33
        assert manager.get_config('experiment', 'sweep') == [0.0, 0.1]

    def test_yaml_scenario_file(self, config_path, tmp_path):
        scenario = tmp_path / "scenario.yaml"
        scenario.write_text(yaml.safe_dump({'lab': {'seed': 7}}))

        manager = ConfigManager(config_path, scenario_path=scenario)

        assert manager.get_lab_config().seed == 7

    def test_malformed_scenario_file(self, config_path, tmp_path):
        scenario = tmp_path / "scenario.txt"
        scenario.write_text("geometry.resolution 33\n")

        with pytest.raises(ValueError, match="scenario.txt:1"):
            ConfigManager(config_path, scenario_path=scenario)

    def test_missing_scenario_file(self, config_path, tmp_path):
        with pytest.raises(ValueError, match="not found"):
            ConfigManager(config_path, scenario_path=tmp_path / "absent.txt")

    def test_as_dict_is_a_copy(self, manager):
        snapshot = manager.as_dict()
        snapshot['geometry']['resolution'] = 9
        assert manager.get_config('geometry', 'resolution') != 9

    def test_expand_path(self, manager, monkeypatch):
        monkeypatch.setenv('ELAB_TEST_DIR', '/tmp/elab')
        assert manager.expand_path('$ELAB_TEST_DIR/runs.db') == Path('/tmp/elab/runs.db')
        assert '~' not in str(manager.expand_path('~/runs.db'))


class TestModuleHelpers:

    def test_parse_assignments(self):
        assert parse_assignments(None) == []
        assert parse_assignments(['a.b=1; c.d=2', 'e.f=3']) == ['a.b=1', 'c.d=2', 'e.f=3']

    def test_global_manager(self, tmp_path):
        reset_config_manager()
        try:
            first = get_config_manager(tmp_path / "settings.yaml")
            assert get_config_manager() is first
        finally:
            reset_config_manager()
