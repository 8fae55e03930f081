from __future__ import annotations

import sys
from pathlib import Path
from typing import Optional, TypeVar

import click
import yaml
from pydantic import BaseModel, ValidationError

from ..models import ErrorResponse, ValidationErrorDetail
from .symbols import err, wrn

M = TypeVar('M', bound=BaseModel)

seed_option = click.option('--seed', help='Override the random seed', default=None, type=int)
threads_option = click.option(
    '--threads', help='Worker threads for window and case evaluation; 1 is fully deterministic',
    default=None, type=click.IntRange(min=1),
)


def echoerr(error: ErrorResponse):
    if isinstance(error.detail, dict):
        for key, value in error.detail.items():
            click.echo(f" {wrn} {key}: {value}", err=True)
    elif isinstance(error.detail, list):
        for item in error.detail:
            if isinstance(item, ValidationErrorDetail):
                item = f"{'.'.join(item.loc)}: {item.msg}"
            click.echo(f" {wrn} {item}", err=True)
    elif isinstance(error.detail, str):
        click.echo(f" {wrn} {error.detail}", err=True)
    elif error.detail is None:
        click.echo(f" {wrn} No error message provided!", err=True)


def validation_error(e: ValidationError) -> ErrorResponse:
    return ErrorResponse(detail=[
        ValidationErrorDetail(loc=[str(v) for v in d['loc']], msg=d['msg'], type=d['type'])
        for d in e.errors()
    ])


def load_config(path: Optional[str | Path], model: type[M]) -> M | ErrorResponse:
    """Load a YAML config file into ``model``; no path gives the defaults."""
    try:
        data = {}
        if path is not None:
            with Path(path).open() as f:
                data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            return ErrorResponse(detail=f'Config file {path} must contain a mapping of keys to values')
        return model(**data)
    except FileNotFoundError:
        return ErrorResponse(detail=f'Config file not found: {path}')
    except yaml.YAMLError as e:
        return ErrorResponse(detail=f'Config file {path} is not valid YAML: {e}')
    except ValidationError as e:
        return validation_error(e)


def fail(message: str, error: ErrorResponse | Exception | None = None) -> None:
    """Report a failure on stderr and exit with status 1."""
    click.echo(f" {err} {message}", err=True)
    if isinstance(error, ErrorResponse):
        echoerr(error)
    elif error is not None:
        echoerr(ErrorResponse(detail=str(error)))
    sys.exit(1)
