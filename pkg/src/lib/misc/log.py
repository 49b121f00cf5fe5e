"""## Run log

Loggers live under the `egp` namespace. Levels are colored with termcolor, like the rest of the CLI output.
"""

import logging
from termcolor import colored

from ..config import config

_LEVEL_COLORS = {
    logging.DEBUG: "blue",
    logging.INFO: "green",
    logging.WARNING: "yellow",
    logging.ERROR: "red",
    logging.CRITICAL: "red",
}


class ColoredFormatter(logging.Formatter):
    def __init__(self, color: bool = True):
        super().__init__("%(levelname)s %(name)s: %(message)s")
        self.color = color

    def format(self, record: logging.LogRecord) -> str:
        msg = super().format(record)
        if not self.color:
            return msg
        return colored(msg, _LEVEL_COLORS.get(record.levelno, "white"))


def _root() -> logging.Logger:
    root = logging.getLogger("egp")
    if not root.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(ColoredFormatter(config.COLOR))
        root.addHandler(handler)
        root.setLevel(config.LOG_LEVEL)
        root.propagate = False
    return root


def get_logger(name: str) -> logging.Logger:
    """Logger for a library module, e.g. `get_logger(__name__)`."""
    _root()
    return logging.getLogger("egp." + name.split(".")[-1])
