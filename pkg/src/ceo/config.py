"""YAML loading that remembers where each value came from.

Errors raised while interpreting a config can then point at the offending line.
"""

from __future__ import annotations

from typing import Any, Optional

import yaml

from .errors import ConfigError


class Located:
    """Parsed YAML document plus a map from key paths to 1-based line numbers."""

    def __init__(self, data: Any, lines: dict, source: str = "<config>"):
        self.data = data
        self._lines = lines
        self.source = source

    def line(self, *path) -> Optional[int]:
        """Line of the deepest known prefix of ``path``."""
        path = tuple(path)
        while path:
            if path in self._lines:
                return self._lines[path]
            path = path[:-1]
        return self._lines.get(())

    def error(self, message: str, *path) -> ConfigError:
        return ConfigError(message, self.line(*path))


def _walk(node, path, lines):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            lines[path + (key,)] = k.start_mark.line + 1
            _walk(v, path + (key,), lines)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _walk(v, path + (i,), lines)


def loads(text: str, source: str = "<config>") -> Located:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise ConfigError(f"{source}: {exc.problem}", None if mark is None else mark.line + 1) from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    lines: dict = {}
    if root is not None:
        _walk(root, (), lines)
    return Located({} if data is None else data, lines, source)


def load(path) -> Located:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return loads(text, str(path))
