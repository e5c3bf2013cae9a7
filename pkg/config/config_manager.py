"""Configuration manager for the elliptic measure laboratory.

This module handles loading, validating, and persisting lab configuration.
Scenario files (YAML or flat ``section.key = value`` text) and command line
``--set`` overrides are merged on top of the bundled defaults.
"""

import os
import yaml
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional
from dataclasses import dataclass, field


@dataclass
class LabConfig:
    """Global run settings."""
    seed: int = 20240601
    threads: int = 0
    profile: str = "square"


@dataclass
class GeometryConfig:
    """Domain construction settings."""
    kind: str = "square"
    dim: int = 2
    resolution: int = 65
    slope: float = 1.0
    depth: int = 1
    disk_radius: float = 0.45


@dataclass
class DyadicConfig:
    """Dyadic lattice settings."""
    finest_scale_cells: int = 2
    net_seed: int = 0
    thin_taus: list = field(default_factory=lambda: [0.05, 0.1, 0.2, 0.4])


@dataclass
class WhitneyConfig:
    """Whitney decomposition and Whitney region settings."""
    whitney_ratio: float = 8.0
    fattening: float = 0.125
    cdc_samples: int = 4
    tuning_limit: int = 7
    strict_tuning: bool = False


@dataclass
class SolverConfig:
    """Discrete elliptic solver settings."""
    tolerance: float = 1.0e-10
    direct_limit: int = 400000
    krylov: str = "gmres"
    max_iterations: int = 2000
    max_ellipticity: float = 10.0
    pole_clearance_cells: int = 2


@dataclass
class PerturbationConfig:
    """Coefficient perturbation settings."""
    epsilons: list = field(default_factory=lambda: [0.01, 0.02, 0.05, 0.1, 0.2])
    bump_radius: float = 0.2
    bump_center: list = field(default_factory=lambda: [0.5, 0.3])
    cone_aperture: float = 1.0
    rh_exponents: list = field(default_factory=lambda: [1.5, 2.0, 3.0])
    radii_per_octave: int = 2


@dataclass
class SfntConfig:
    """Square function / non-tangential maximal function settings."""
    q: float = 2.0
    samples: int = 5
    beta_values: list = field(default_factory=lambda: [0.1, 0.25, 0.5])
    gamma_values: list = field(default_factory=lambda: [0.01, 0.05, 0.25, 1.0, 4.0])


@dataclass
class ExperimentConfig:
    """Scenario runner settings."""
    kind: str = "epsilon_sweep"
    sweep: list = field(default_factory=lambda: [0.01, 0.02, 0.05, 0.1, 0.2])
    out_dir: str = "./elab-out"
    rh_jump_threshold: float = 0.5


@dataclass
class StorageConfig:
    """Run registry settings."""
    db_path: str = "~/.elab/data/runs.db"


@dataclass
class LoggingConfig:
    """Logging configuration settings."""
    level: str = "INFO"
    log_path: str = "~/.elab/logs/elab.log"
    max_log_size: int = 10485760  # 10 MB
    backup_count: int = 5


SECTIONS = (
    'lab', 'geometry', 'dyadic', 'whitney', 'solver', 'perturbation',
    'sfnt', 'experiment', 'storage', 'logging',
)


class ConfigManager:
    """Manages lab configuration with validation and persistence."""

    DEFAULT_CONFIG_PATH = Path.home() / ".elab" / "config" / "settings.yaml"
    BUNDLED_CONFIG_PATH = Path(__file__).parent / "settings.yaml"
    ENV_PREFIX = "ELAB_"

    def __init__(self, config_path: Optional[Path] = None, scenario_path: Optional[Path] = None):
        """Initialize configuration manager.

        Args:
            config_path: Optional custom path to configuration file.
                        If None, uses default user config path.
            scenario_path: Optional scenario file merged over the user config.
        """
        self.config_path = Path(config_path) if config_path else self.DEFAULT_CONFIG_PATH
        self._config: Dict[str, Any] = {}
        self._load_config(Path(scenario_path) if scenario_path else None)

    def _load_config(self, scenario_path: Optional[Path]) -> None:
        """Load configuration from file with fallback to defaults."""
        default_config = self._load_yaml(self.BUNDLED_CONFIG_PATH)

        if self.config_path.exists():
            user_config = self._load_yaml(self.config_path)
            self._config = self._merge_configs(default_config, user_config)
        else:
            self._config = default_config
            self.save_config()

        if scenario_path is not None:
            self._config = self._merge_configs(self._config, self.load_scenario(scenario_path))

        self._apply_env_overrides()
        self._validate_config()

    def _load_yaml(self, path: Path) -> Dict[str, Any]:
        """Load YAML configuration file.

        Args:
            path: Path to YAML file

        Returns:
            Dictionary containing configuration
        """
        try:
            with open(path, 'r', encoding='utf-8') as f:
                config = yaml.safe_load(f)
                return config if config else {}
        except FileNotFoundError:
            return {}
        except yaml.YAMLError as e:
            raise ValueError(f"Invalid YAML in config file {path}: {e}")

    def load_scenario(self, path: Path) -> Dict[str, Any]:
        """Read a scenario file.

        ``.yaml``/``.yml`` files are parsed as YAML; anything else is read as
        flat ``section.key = value`` lines (``#`` starts a comment).

        Raises:
            ValueError: If the file is malformed
        """
        if not path.exists():
            raise ValueError(f"Scenario file not found: {path}")
        if path.suffix.lower() in ('.yaml', '.yml'):
            return self._load_yaml(path)

        scenario: Dict[str, Any] = {}
        with open(path, 'r', encoding='utf-8') as f:
            for number, raw in enumerate(f, start=1):
                line = raw.split('#', 1)[0].strip()
                if not line:
                    continue
                if '=' not in line:
                    raise ValueError(f"{path}:{number}: expected 'section.key = value'")
                dotted, value = (part.strip() for part in line.split('=', 1))
                section, key = self._split_dotted(dotted)
                scenario.setdefault(section, {})[key] = self._convert_env_value(value)
        return scenario

    def _split_dotted(self, dotted: str) -> tuple:
        parts = dotted.split('.')
        if len(parts) != 2 or not all(parts):
            raise ValueError(f"Expected 'section.key', got '{dotted}'")
        return parts[0].lower(), parts[1].lower()

    def _merge_configs(self, base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
        """Recursively merge two configuration dictionaries.

        Args:
            base: Base configuration dictionary
            override: Override configuration dictionary

        Returns:
            Merged configuration dictionary
        """
        result = base.copy()

        for key, value in override.items():
            if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                result[key] = self._merge_configs(result[key], value)
            else:
                result[key] = value

        return result

    def _apply_env_overrides(self) -> None:
        """Apply environment variable overrides to configuration.

        Environment variables should be prefixed with ELAB_ and use
        double underscores for nested keys. For example:
        ELAB_SOLVER__TOLERANCE=1e-12

        ELAB_THREADS is accepted as shorthand for ELAB_LAB__THREADS.
        """
        threads = os.environ.get(f"{self.ENV_PREFIX}THREADS")
        if threads is not None and 'lab' in self._config:
            self._config['lab']['threads'] = self._convert_env_value(threads)

        for env_key, env_value in os.environ.items():
            if not env_key.startswith(self.ENV_PREFIX):
                continue

            config_key = env_key[len(self.ENV_PREFIX):].lower()
            parts = config_key.split("__")

            if len(parts) != 2:
                continue

            section, key = parts

            if section not in self._config:
                continue

            self._config[section][key] = self._convert_env_value(env_value)

    def _convert_env_value(self, value: str) -> Any:
        """Convert an override string to the appropriate type.

        Args:
            value: String value from environment, scenario file or command line

        Returns:
            Converted value (bool, int, float, list, None or str)
        """
        text = value.strip()
        lowered = text.lower()
        if lowered in ('true', 'yes'):
            return True
        if lowered in ('false', 'no'):
            return False
        if lowered in ('null', 'none', '~'):
            return None

        try:
            return int(text)
        except ValueError:
            pass

        try:
            return float(text)
        except ValueError:
            pass

        if text.startswith('[') and text.endswith(']'):
            inner = text[1:-1].strip()
            if not inner:
                return []
            return [self._convert_env_value(item) for item in inner.split(',')]

        return text.strip('"').strip("'")

    def apply_overrides(self, assignments: Iterable[str]) -> None:
        """Apply ``section.key=value`` overrides from the command line.

        Raises:
            ValueError: If an assignment is malformed or fails validation
        """
        for assignment in assignments:
            if '=' not in assignment:
                raise ValueError(f"Override must look like section.key=value, got '{assignment}'")
            dotted, value = assignment.split('=', 1)
            section, key = self._split_dotted(dotted.strip())
            if section not in self._config:
                raise ValueError(f"Unknown configuration section: {section}")
            self._config[section][key] = self._convert_env_value(value)
        self._validate_config()

    def _validate_config(self) -> None:
        """Validate configuration has all required fields and correct types."""
        for section in SECTIONS:
            if section not in self._config:
                raise ValueError(f"Missing required configuration section: {section}")

        lab = self._config['lab']
        self._validate_field(lab, 'seed', int, 0)
        self._validate_field(lab, 'threads', int, 0, 512)
        self._validate_field(lab, 'profile', str)

        geometry = self._config['geometry']
        self._validate_field(geometry, 'kind', str)
        self._validate_field(geometry, 'dim', int, 2, 3)
        self._validate_field(geometry, 'resolution', int, 9, 4097)
        self._validate_field(geometry, 'slope', (int, float), 0, 8)
        self._validate_field(geometry, 'depth', int, 0, 6)
        self._validate_field(geometry, 'disk_radius', float, 0.05, 0.5)

        dyadic = self._config['dyadic']
        self._validate_field(dyadic, 'finest_scale_cells', int, 1, 64)
        self._validate_field(dyadic, 'net_seed', int, 0)
        self._validate_field(dyadic, 'thin_taus', list)

        whitney = self._config['whitney']
        self._validate_field(whitney, 'whitney_ratio', (int, float), 4, 40)
        self._validate_field(whitney, 'fattening', float, 0.0, 0.25)
        self._validate_field(whitney, 'cdc_samples', int, 1, 1000)
        self._validate_field(whitney, 'tuning_limit', int, 1, 20)
        self._validate_field(whitney, 'strict_tuning', bool)

        solver = self._config['solver']
        self._validate_field(solver, 'tolerance', float, 0.0, 1.0e-4)
        self._validate_field(solver, 'direct_limit', int, 0)
        self._validate_field(solver, 'krylov', str)
        self._validate_field(solver, 'max_iterations', int, 1, 1000000)
        self._validate_field(solver, 'max_ellipticity', (int, float), 1, 1.0e6)
        self._validate_field(solver, 'pole_clearance_cells', int, 1, 64)
        if solver['krylov'] not in ('gmres', 'bicgstab'):
            raise ValueError(f"Field krylov must be 'gmres' or 'bicgstab', got {solver['krylov']}")

        perturbation = self._config['perturbation']
        self._validate_field(perturbation, 'epsilons', list)
        self._validate_field(perturbation, 'bump_radius', float, 0.0, 1.0)
        self._validate_field(perturbation, 'bump_center', list)
        self._validate_field(perturbation, 'cone_aperture', (int, float), 0.0, 16.0)
        self._validate_field(perturbation, 'rh_exponents', list)
        self._validate_field(perturbation, 'radii_per_octave', int, 1, 8)
        if any(p <= 1 for p in perturbation['rh_exponents']):
            raise ValueError("Field rh_exponents must hold exponents > 1")

        sfnt = self._config['sfnt']
        self._validate_field(sfnt, 'q', (int, float), 1.0, 16.0)
        self._validate_field(sfnt, 'samples', int, 1, 1000)
        self._validate_field(sfnt, 'beta_values', list)
        self._validate_field(sfnt, 'gamma_values', list)

        experiment = self._config['experiment']
        self._validate_field(experiment, 'kind', str)
        self._validate_field(experiment, 'sweep', list)
        self._validate_field(experiment, 'out_dir', str)
        self._validate_field(experiment, 'rh_jump_threshold', (int, float), 0.0)
        if experiment['kind'] not in ('identity', 'epsilon_sweep', 'blend'):
            raise ValueError(f"Unknown experiment kind: {experiment['kind']}")

        self._validate_field(self._config['storage'], 'db_path', str)

        logging = self._config['logging']
        self._validate_field(logging, 'level', str)
        self._validate_field(logging, 'log_path', str)
        self._validate_field(logging, 'max_log_size', int, 1024, 104857600)
        self._validate_field(logging, 'backup_count', int, 0, 100)

    def _validate_field(self, section: Dict[str, Any], field: str,
                        expected_type: Any, min_val: Optional[float] = None,
                        max_val: Optional[float] = None) -> None:
        """Validate a configuration field.

        Args:
            section: Configuration section dictionary
            field: Field name to validate
            expected_type: Expected type (or tuple of types) of the field
            min_val: Optional minimum value for numeric fields
            max_val: Optional maximum value for numeric fields

        Raises:
            ValueError: If validation fails
        """
        if field not in section:
            raise ValueError(f"Missing required field: {field}")

        value = section[field]
        types = expected_type if isinstance(expected_type, tuple) else (expected_type,)

        # ints are accepted where floats are expected, bools never count as numbers
        if float in types and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
            section[field] = value
        if not isinstance(value, types) or (isinstance(value, bool) and bool not in types):
            names = "/".join(t.__name__ for t in types)
            raise ValueError(
                f"Field {field} must be of type {names}, "
                f"got {type(value).__name__}"
            )

        numeric = isinstance(value, (int, float)) and not isinstance(value, bool)
        if numeric and min_val is not None and value < min_val:
            raise ValueError(f"Field {field} must be >= {min_val}, got {value}")

        if numeric and max_val is not None and value > max_val:
            raise ValueError(f"Field {field} must be <= {max_val}, got {value}")

    def save_config(self) -> None:
        """Save current configuration to file."""
        self.config_path.parent.mkdir(parents=True, exist_ok=True)

        with open(self.config_path, 'w', encoding='utf-8') as f:
            yaml.dump(self._config, f, default_flow_style=False, sort_keys=False)

    def get_config(self, section: str, key: Optional[str] = None) -> Any:
        """Get configuration value.

        Args:
            section: Configuration section name
            key: Optional key within section. If None, returns entire section.

        Returns:
            Configuration value

        Raises:
            KeyError: If section or key doesn't exist
        """
        if section not in self._config:
            raise KeyError(f"Configuration section not found: {section}")

        if key is None:
            return self._config[section]

        if key not in self._config[section]:
            raise KeyError(f"Configuration key not found: {section}.{key}")

        return self._config[section][key]

    def set_config(self, section: str, key: str, value: Any) -> None:
        """Set configuration value.

        Raises:
            KeyError: If section doesn't exist
        """
        if section not in self._config:
            raise KeyError(f"Configuration section not found: {section}")

        self._config[section][key] = value

    def as_dict(self) -> Dict[str, Any]:
        """Return a deep copy of the merged configuration."""
        return yaml.safe_load(yaml.safe_dump(self._config))

    def worker_count(self) -> int:
        """Number of worker threads, 0 meaning one per CPU."""
        threads = self._config['lab']['threads']
        return threads if threads > 0 else (os.cpu_count() or 1)

    def get_lab_config(self) -> LabConfig:
        """Get lab configuration as dataclass."""
        return LabConfig(**self._config['lab'])

    def get_geometry_config(self) -> GeometryConfig:
        """Get geometry configuration as dataclass."""
        return GeometryConfig(**self._config['geometry'])

    def get_dyadic_config(self) -> DyadicConfig:
        """Get dyadic configuration as dataclass."""
        return DyadicConfig(**self._config['dyadic'])

    def get_whitney_config(self) -> WhitneyConfig:
        """Get Whitney configuration as dataclass."""
        return WhitneyConfig(**self._config['whitney'])

    def get_solver_config(self) -> SolverConfig:
        """Get solver configuration as dataclass."""
        return SolverConfig(**self._config['solver'])

    def get_perturbation_config(self) -> PerturbationConfig:
        """Get perturbation configuration as dataclass."""
        return PerturbationConfig(**self._config['perturbation'])

    def get_sfnt_config(self) -> SfntConfig:
        """Get square function configuration as dataclass."""
        return SfntConfig(**self._config['sfnt'])

    def get_experiment_config(self) -> ExperimentConfig:
        """Get experiment configuration as dataclass."""
        return ExperimentConfig(**self._config['experiment'])

    def get_storage_config(self) -> StorageConfig:
        """Get storage configuration as dataclass."""
        return StorageConfig(**self._config['storage'])

    def get_logging_config(self) -> LoggingConfig:
        """Get logging configuration as dataclass."""
        return LoggingConfig(**self._config['logging'])

    def expand_path(self, path: str) -> Path:
        """Expand user home directory and environment variables in path."""
        return Path(os.path.expanduser(os.path.expandvars(path)))


# Global configuration manager instance
_config_manager: Optional[ConfigManager] = None


def get_config_manager(config_path: Optional[Path] = None) -> ConfigManager:
    """Get or create global configuration manager instance.

    Args:
        config_path: Optional custom path to configuration file

    Returns:
        ConfigManager instance
    """
    global _config_manager

    if _config_manager is None:
        _config_manager = ConfigManager(config_path)

    return _config_manager


def reset_config_manager() -> None:
    """Drop the global instance (used between CLI invocations and in tests)."""
    global _config_manager
    _config_manager = None


def parse_assignments(values: Optional[List[str]]) -> List[str]:
    """Normalise repeated ``--set`` arguments, splitting semicolon-joined pairs."""
    result: List[str] = []
    for value in values or []:
        result.extend(part.strip() for part in value.split(';') if part.strip())
    return result
