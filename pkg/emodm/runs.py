"""
Run plumbing shared by the management commands: seeds, output
directories, manifests and JSON writing.
"""

import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from django.conf import settings
from django.core.management.base import CommandError
from django.core.serializers.json import DjangoJSONEncoder

from .exceptions import EmodmError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class ReportEncoder(DjangoJSONEncoder):
    """DjangoJSONEncoder that also understands numpy scalars, arrays and paths."""

    def default(self, o):
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.floating):
            return float(o)
        if isinstance(o, np.bool_):
            return bool(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, Path):
            return str(o)
        return super().default(o)


def resolve_seed(seed=None):
    """--seed wins; otherwise EMODM_SEED through settings."""
    return int(seed) if seed is not None else int(settings.EMODM['SEED'])


def write_json(path, payload):
    path = Path(path)
    path.write_text(
        json.dumps(payload, cls=ReportEncoder, indent=2, sort_keys=True, allow_nan=False) + '\n',
        encoding='utf-8',
    )
    return path


@dataclass
class RunConfig:
    command: str
    seed: int
    output_dir: Path
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.output_dir = Path(self.output_dir)

    @classmethod
    def from_options(cls, command, options, **params):
        output_dir = options.get('output_dir') or Path(settings.EMODM['OUTPUT_DIR']) / command
        return cls(
            command=command,
            seed=resolve_seed(options.get('seed')),
            output_dir=output_dir,
            params=params,
        )

    def prepare(self):
        self.output_dir.mkdir(parents=True, exist_ok=True)
        return self.output_dir

    def path(self, name):
        return self.output_dir / name

    def manifest(self):
        return {
            'schema_version': SCHEMA_VERSION,
            'command': self.command,
            'seed': self.seed,
            'config': self.params,
        }

    def write_manifest(self):
        path = write_json(self.path('manifest.json'), self.manifest())
        logger.debug(f'manifest written to {path}')
        return path


@contextmanager
def command_errors():
    """Re-raise toolkit errors as CommandError carrying the family exit code."""
    try:
        yield
    except EmodmError as exc:
        raise CommandError(str(exc), returncode=exc.exit_code) from exc
