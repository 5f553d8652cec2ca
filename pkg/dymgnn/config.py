"""
dymgnn Configuration Module
Supports loading from:
1. INI config file (/etc/dymgnn/dymgnn.conf or a path given with --config)
2. Environment variables (override config file)
3. Default values (fallback)

Global keys live in [DEFAULT]; every subcommand reads its own section
([synth], [build], [train], [eval], [explain]).
"""

import os
import logging
from configparser import ConfigParser
from dataclasses import dataclass, field
from typing import Dict, Any, Optional, List

from pythonjsonlogger import jsonlogger

from dymgnn.exceptions import ConfigException

logger = logging.getLogger(__name__)


# Per-command keys and their defaults. Keys absent here are rejected.
COMMAND_DEFAULTS: Dict[str, Dict[str, str]] = {
    'synth': {
        'output': 'synth',
        'n_loans': '2000',
        'months': '18',
        'start_period': '2012-01',
        'n_areas': '40',
        'n_companies': '12',
        'base_rate': '0.05',
        'contagion': '1.5',
        'horizon': '12',
        'seed': '0',
        'signal': 'full',
    },
    'build': {
        'input': '',
        'output': 'windows',
        'layers': 'both',
        'isolate_fraction': '0.5',
        'window_len': '6',
        'stride': '1',
        'horizon': '12',
        'fit_start': '',
        'fit_end': '',
        'held_out': '2',
        'start': '',
        'end': '',
        'seed': '0',
    },
    'train': {
        'train_data': '',
        'validation_data': '',
        'validation_window': '-1',
        'output': 'model',
        'model': 'gat-lstm-att',
        'embedding_size': '16',
        'gnn_depth': '1',
        'gat_heads': '2',
        'dropout': '0.5',
        'epochs': '200',
        'early_stop': '50',
        'learning_rate': '0.001',
        'isolate_per_epoch': 'false',
        'penalty': 'l2',
        'penalty_strength': '0.0',
        'seed': '0',
    },
    'eval': {
        'checkpoints': '',
        'data': '',
        'window': '-1',
        'output': 'eval',
        'threshold': '0.5',
        'resamples': '1000',
        'seed': '0',
    },
    'explain': {
        'checkpoint': '',
        'data': '',
        'window': '-1',
        'output': 'explain',
        'samples': '50',
        'exact': 'false',
        'top_k': '4',
        'seed': '0',
    },
}


class DYMConfig:
    """dymgnn Configuration Manager"""

    # Default configuration file path
    CONFIG_FILE = '/etc/dymgnn/dymgnn.conf'

    # Default values
    DEFAULT_OUTPUT_ROOT = os.path.join(os.getcwd(), 'dymgnn-runs')
    DEFAULT_LOG_LEVEL = 'INFO'
    DEFAULT_LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    DEFAULT_LEDGER_URL = None  # derived from OUTPUT_ROOT when unset
    DEFAULT_N_JOBS = 1

    # Class attributes (loaded values)
    OUTPUT_ROOT = None
    LOG_LEVEL = DEFAULT_LOG_LEVEL
    LOG_FORMAT = DEFAULT_LOG_FORMAT
    LEDGER_URL = None
    N_JOBS = DEFAULT_N_JOBS

    _loaded = False
    _config_file = None
    _sections: Dict[str, Dict[str, str]] = {}

    @classmethod
    def load_config(cls, config_file: Optional[str] = None, force: bool = False):
        """
        Load configuration from file and environment variables.

        Args:
            config_file: Path to config file (optional)
            force: Reload even if a configuration was already loaded
        """
        if cls._loaded and not force and config_file == cls._config_file:
            logger.debug("Configuration already loaded, skipping reload")
            return

        path = config_file or cls.CONFIG_FILE
        logger.debug(f"Loading config from: {path}")

        sections = cls._load_ini_file(path, required=config_file is not None)
        cls._sections = sections
        cls._config_file = config_file
        defaults = sections.get('DEFAULT', {})

        # Priority: env var > config file > default
        cls.OUTPUT_ROOT = os.environ.get(
            'DYMGNN_OUTPUT_ROOT',
            defaults.get('output_root', cls.DEFAULT_OUTPUT_ROOT)
        )

        cls.LOG_LEVEL = os.environ.get(
            'DYMGNN_LOG_LEVEL',
            defaults.get('log_level', cls.DEFAULT_LOG_LEVEL)
        ).upper()

        cls.LOG_FORMAT = os.environ.get(
            'DYMGNN_LOG_FORMAT',
            defaults.get('log_format', cls.DEFAULT_LOG_FORMAT)
        )

        cls.LEDGER_URL = os.environ.get(
            'DYMGNN_LEDGER_URL',
            defaults.get('ledger_url', cls.DEFAULT_LEDGER_URL)
        ) or f"sqlite:///{os.path.join(cls.OUTPUT_ROOT, 'runs.db')}"

        try:
            cls.N_JOBS = int(os.environ.get(
                'DYMGNN_N_JOBS',
                defaults.get('n_jobs', cls.DEFAULT_N_JOBS)
            ))
        except ValueError as e:
            raise ConfigException(f"n_jobs must be an integer: {e}")

        cls._loaded = True
        logger.info(f"Configuration loaded from: {path}")
        logger.debug(f"OUTPUT_ROOT: {cls.OUTPUT_ROOT}")
        logger.debug(f"LEDGER_URL: {cls.LEDGER_URL}")

    @classmethod
    def _load_ini_file(cls, config_file: str, required: bool = False) -> Dict[str, Dict[str, str]]:
        """
        Load every section of an INI file.

        Expected format:
        [DEFAULT]
        output_root = /data/dymgnn
        log_level = INFO

        [train]
        model = gat-lstm-att
        epochs = 200
        """
        sections: Dict[str, Dict[str, str]] = {}

        if not os.path.exists(config_file):
            if required:
                raise ConfigException(f"Config file not found: {config_file}")
            logger.debug(f"Config file not found: {config_file}, using defaults")
            return sections

        parser = ConfigParser(interpolation=None)
        try:
            parser.read(config_file, encoding='utf-8')
        except Exception as e:
            raise ConfigException(f"Failed to parse config file {config_file}: {e}")

        sections['DEFAULT'] = dict(parser.defaults())
        for section in parser.sections():
            if section not in COMMAND_DEFAULTS:
                raise ConfigException(
                    f"Unknown section [{section}] in {config_file}; "
                    f"expected one of {sorted(COMMAND_DEFAULTS)}"
                )
            # items() would merge DEFAULT keys in; keep only the section's own keys
            sections[section] = {
                key: value for key, value in parser.items(section)
                if key not in parser.defaults()
            }

        logger.info(f"Loaded {len(sections)} config sections from {config_file}")
        return sections

    @classmethod
    def get_section(cls, command: str) -> Dict[str, str]:
        """Get the raw key/value pairs of one command section."""
        if not cls._loaded:
            cls.load_config()
        return dict(cls._sections.get(command, {}))

    @classmethod
    def reload(cls, config_file: Optional[str] = None):
        """Reload configuration (useful for testing)."""
        cls._loaded = False
        cls._sections = {}
        cls.load_config(config_file, force=True)


@dataclass
class RunConfig:
    """Fully resolved key/value settings of one subcommand invocation."""

    command: str
    values: Dict[str, str] = field(default_factory=dict)

    def get(self, key: str) -> str:
        if key not in self.values:
            raise ConfigException(f"Unknown {self.command} setting: {key}")
        return self.values[key]

    def require(self, key: str) -> str:
        value = self.get(key)
        if value == '':
            raise ConfigException(f"Setting '{key}' is required for '{self.command}'")
        return value

    def get_int(self, key: str) -> int:
        try:
            return int(self.get(key))
        except ValueError:
            raise ConfigException(f"Setting '{key}' must be an integer, got {self.get(key)!r}")

    def get_float(self, key: str) -> float:
        try:
            return float(self.get(key))
        except ValueError:
            raise ConfigException(f"Setting '{key}' must be a number, got {self.get(key)!r}")

    def get_bool(self, key: str) -> bool:
        value = self.get(key).strip().lower()
        if value in ('1', 'true', 'yes', 'on'):
            return True
        if value in ('0', 'false', 'no', 'off'):
            return False
        raise ConfigException(f"Setting '{key}' must be a boolean, got {value!r}")

    def get_list(self, key: str) -> List[str]:
        return [item.strip() for item in self.get(key).split(',') if item.strip()]

    def write(self, path: str):
        """Write the resolved configuration as an INI file."""
        parser = ConfigParser(interpolation=None)
        parser[self.command] = dict(sorted(self.values.items()))
        with open(path, 'w', encoding='utf-8') as f:
            parser.write(f)


def resolve_run_config(command: str, config_file: Optional[str] = None,
                       overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Resolve the settings of one subcommand.

    Precedence: command defaults < config file section < command-line overrides.

    Raises:
        ConfigException: for unknown commands or unknown keys
    """
    if command not in COMMAND_DEFAULTS:
        raise ConfigException(f"Unknown command: {command}")

    DYMConfig.load_config(config_file)
    allowed = COMMAND_DEFAULTS[command]
    values = dict(allowed)

    for source, items in (('config file', DYMConfig.get_section(command)),
                          ('command line', overrides or {})):
        for key, value in items.items():
            if value is None:
                continue
            if key not in allowed:
                raise ConfigException(f"Unknown {command} setting '{key}' from {source}")
            if isinstance(value, bool):
                value = 'true' if value else 'false'
            values[key] = str(value)

    return RunConfig(command=command, values=values)


def setup_logging(level: Optional[str] = None, fmt: Optional[str] = None):
    """
    Configure the root logger for a CLI process.

    fmt = 'json' selects python-json-logger; anything else is a logging format string.
    """
    level = (level or DYMConfig.LOG_LEVEL or DYMConfig.DEFAULT_LOG_LEVEL).upper()
    fmt = fmt or DYMConfig.LOG_FORMAT or DYMConfig.DEFAULT_LOG_FORMAT

    handler = logging.StreamHandler()
    if fmt.strip().lower() == 'json':
        handler.setFormatter(jsonlogger.JsonFormatter(
            '%(asctime)s %(name)s %(levelname)s %(message)s'
        ))
    else:
        handler.setFormatter(logging.Formatter(fmt))

    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    try:
        root.setLevel(level)
    except ValueError as e:
        raise ConfigException(f"Invalid log level {level!r}: {e}")
