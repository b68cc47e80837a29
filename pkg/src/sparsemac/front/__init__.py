from .network import (
    NetworkDescription,
    ParseError,
    load_network,
    network_from_dict,
    network_to_dict,
    parse_network,
    serialize_network,
)
from .runconfig import ConfigError, RunConfig, config_from_dict, load_config, parse_config

__all__ = [
    "NetworkDescription",
    "ParseError",
    "parse_network",
    "serialize_network",
    "network_from_dict",
    "network_to_dict",
    "load_network",
    "RunConfig",
    "ConfigError",
    "parse_config",
    "config_from_dict",
    "load_config",
]
