"""Insider-threat detection on user activity logs with a selective state-space encoder."""

from .config import Config, ConfigError, load_config
from .detection import detect, metrics, otsu_threshold
from .features import FeaturizedSession, featurize_all, read_jsonl, write_jsonl
from .logs import load_corpus, sessionize
from .model import Detector, Network
from .training import train

__version__ = "0.1.0"

__all__ = [
    "Config", "ConfigError", "load_config", "detect", "metrics", "otsu_threshold",
    "FeaturizedSession", "featurize_all", "read_jsonl", "write_jsonl", "load_corpus",
    "sessionize", "Detector", "Network", "train",
]
