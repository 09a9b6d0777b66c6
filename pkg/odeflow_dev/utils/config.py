import logging
import os
from pathlib import Path
from typing import List, Optional, Sequence, Union

from hydra import compose, initialize_config_dir
from hydra.errors import HydraException
from omegaconf import DictConfig, OmegaConf
from omegaconf.errors import OmegaConfBaseException

from .errors import ConfigError

__all__ = ['CONFIG_DIR', 'LOG_FORMAT', 'setup_logging', 'read_config_file', 'compose_config', 'flatten_config',
           'echo_config']

PathLike = Union[str, Path]

CONFIG_DIR = Path(os.environ.get('ODEFLOW_CONFIG_DIR', Path(__file__).resolve().parents[2] / 'configs'))
LOG_FORMAT = '[%(asctime)s][%(name)s][%(levelname)s] - %(message)s'


def setup_logging(level: str = 'INFO') -> None:
    logging.basicConfig(format=LOG_FORMAT)
    logger = logging.getLogger()
    logger.setLevel(level)


def read_config_file(path: PathLike) -> List[str]:
    """key=value lines; blank lines and # comments are skipped."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f'config file not found: {path}')
    overrides = []
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        if '=' not in line:
            raise ConfigError(f'{path}:{number}: expected key=value, got "{line}"')
        overrides.append(line)
    return overrides


def compose_config(overrides: Sequence[str] = (), config_dir: Optional[PathLike] = None) -> DictConfig:
    config_dir = Path(config_dir) if config_dir is not None else CONFIG_DIR
    if not config_dir.is_dir():
        raise ConfigError(f'config directory not found: {config_dir}')
    try:
        with initialize_config_dir(config_dir=str(config_dir.resolve()), version_base=None):
            cfg = compose(config_name='config', overrides=list(overrides))
        OmegaConf.resolve(cfg)
    except (HydraException, OmegaConfBaseException) as e:
        raise ConfigError(str(e)) from e
    return cfg


def _format_value(value) -> str:
    if value is None:
        return 'null'
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return '[' + ','.join(_format_value(v) for v in value) + ']'
    text = str(value).replace('\\', '\\\\').replace("'", "\\'")
    return f"'{text}'"


def flatten_config(cfg: DictConfig) -> List[str]:
    """Leaf key=value lines that, passed back as overrides, rebuild cfg."""
    lines = []

    def walk(node, prefix):
        for key, value in node.items():
            name = f'{prefix}{key}'
            if isinstance(value, dict):
                walk(value, f'{name}.')
            else:
                lines.append(f'{name}={_format_value(value)}')

    walk(OmegaConf.to_container(cfg, resolve=True), '')
    return lines


def echo_config(cfg: DictConfig, out_dir: PathLike) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / 'config.yaml').write_text(OmegaConf.to_yaml(cfg, resolve=True))
    (out_dir / 'config.txt').write_text('\n'.join(flatten_config(cfg)) + '\n')
