"""Tabular rendering of pydantic models and plain mappings."""
from __future__ import annotations

import json
from typing import Any, Callable, Optional, Sequence

import click
import jsonpath
import yaml
from pydantic import BaseModel
from tabulate import tabulate

OUTPUT_FORMATS = ['table', 'plain', 'json', 'yaml']

output_format_option = click.option(
    '-o', '--output', help='Output format', default='table',
    type=click.Choice(OUTPUT_FORMATS), show_default=True,
)


class RenderField:
    def __init__(self, label: str, path: str = '$', mod: Optional[Callable[[Any], Any]] = None,
                 sep: str = '\n') -> None:
        self.label = label
        self.path = path
        self.mod = mod
        self.sep = sep

    def extract(self, item: dict) -> Any:
        values = jsonpath.findall(self.path, item)
        if self.mod is not None:
            values = [self.mod(v) for v in values]
        if not values:
            return None
        if len(values) == 1 and '*' not in self.path:
            return values[0]
        return self.sep.join(str(v) for v in values)


class Renderer:
    def __init__(self, data: BaseModel | dict | Sequence[BaseModel | dict], fields: list[RenderField]) -> None:
        items = data if isinstance(data, (list, tuple)) else [data]
        self.items = [self._as_dict(item) for item in items]
        self.fields = fields

    @staticmethod
    def _as_dict(item) -> dict:
        if isinstance(item, BaseModel):
            return item.model_dump(mode='json', by_alias=True)
        return dict(item)

    def _rows(self) -> list[list[Any]]:
        return [[f.extract(item) for f in self.fields] for item in self.items]

    def render(self, output_format: str = 'table') -> str:
        if output_format == 'json':
            return json.dumps(self.items if len(self.items) != 1 else self.items[0], indent=2)
        if output_format == 'yaml':
            return yaml.safe_dump(self.items, sort_keys=False).rstrip()
        if output_format == 'plain':
            lines = []
            for row in self._rows():
                width = max(len(f.label) for f in self.fields)
                lines.extend(f'{f.label:<{width}} : {value}' for f, value in zip(self.fields, row))
                lines.append('')
            return '\n'.join(lines).rstrip()
        return tabulate(self._rows(), headers=[f.label for f in self.fields], tablefmt='simple')
