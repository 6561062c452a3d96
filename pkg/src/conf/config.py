import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

from pydantic import BaseSettings, Field

from src.exceptions import ConfigurationError
from src.services.messages_templates import CONFIG_FILE_NOT_FOUND, CONFIG_FILE_INVALID


class Settings(BaseSettings):
    output_dir: str = 'runs'
    workers: int = Field(default=2, ge=1)
    log_level: str = 'INFO'
    seed: int = 2023
    histogram_bins: str = 'fd'

    class Config:
        env_prefix = "HEDGE_"
        env_file = ".env"
        env_file_encoding = "utf-8"


settings = Settings()


def configure_logging(level: str | None = None) -> None:
    """
    The configure_logging function sets up the root logger once for a command-line run.

    :param level: str | None: Log level name, falls back to settings.log_level
    :return: None
    """
    logging.basicConfig(
        level=(level or settings.log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def load_config_file(path: str | Path) -> dict:
    """
    The load_config_file function reads the flat key-value experiment document.
        Values keep their TOML types (numbers, strings, booleans, lists). Nested tables are rejected so the
        document stays flat.

    :param path: str | Path: Location of the TOML file
    :return: A dictionary of raw values, validated later by ExperimentConfig
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(CONFIG_FILE_NOT_FOUND.format(path=path))
    try:
        with path.open('rb') as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as err:
        raise ConfigurationError(CONFIG_FILE_INVALID.format(path=path, reason=err)) from err
    nested = [key for key, value in data.items() if isinstance(value, dict)]
    if nested:
        raise ConfigurationError(CONFIG_FILE_INVALID.format(path=path, reason=f'nested tables {nested}'))
    return data
