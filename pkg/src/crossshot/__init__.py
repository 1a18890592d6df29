"""Cross-shot entity consistency evaluation for multi-shot video generation."""

from .config import EvalConfig, RunConfig
from .metrics import MetricValue
from .script import EpisodeScript, load_dataset, parse_script

__version__ = "0.1.0"

__all__ = ["EpisodeScript", "EvalConfig", "MetricValue", "RunConfig", "load_dataset", "parse_script"]
