from latentcbf.cli.config import ConfigError, RunConfig, load_config
from latentcbf.cli.main import build_parser, main, steer_sequences

__all__ = ["ConfigError", "RunConfig", "build_parser", "load_config", "main", "steer_sequences"]
