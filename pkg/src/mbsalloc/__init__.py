"""Dynamic bandwidth allocation for layered MBS video and prioritized non-MBS calls."""

from mbsalloc.config import SystemConfig, Technique, dump_config, load_config, read_config, reference_cell

__all__ = ["SystemConfig", "Technique", "dump_config", "load_config", "read_config", "reference_cell"]
__version__ = "0.1.0"
