import logging

from cachelib import SimpleCache
from rich.console import Console
from rich.logging import RichHandler

console = Console(stderr=True)
cache = SimpleCache(threshold=200000, default_timeout=0) # recourse values never expire within a process


def init_logging(level="INFO"):
    root = logging.getLogger("ddu_ro")
    if not any(isinstance(h, RichHandler) for h in root.handlers):
        handler = RichHandler(console=console, show_path=False, rich_tracebacks=True)
        handler.setFormatter(logging.Formatter("%(message)s"))
        root.addHandler(handler)
    root.setLevel(level)
    return root
