"""
Named experiment setups for the two synthetic benchmarks.
"""

import math
from dataclasses import dataclass, field
from typing import Dict

from emodm.exceptions import ScheduleError

from .llg import AzimuthFault, LlgParams
from .sallen_key import DOUBLE, SINGLE, CircuitParams, DriftDistribution
from .schedule import FaultSchedule

SALLEN_KEY = 'sallen-key'
LLG = 'llg'
KINDS = (SALLEN_KEY, LLG)


@dataclass(frozen=True)
class SallenKeyPreset:
    schedule: FaultSchedule
    input_kind: str = SINGLE
    nominal: CircuitParams = field(default_factory=CircuitParams.nominal)
    drift: DriftDistribution = field(default_factory=DriftDistribution)
    mc_draws: int = 1000


@dataclass(frozen=True)
class LlgPreset:
    schedule: FaultSchedule
    params: LlgParams = field(default_factory=LlgParams)
    fault: AzimuthFault = field(default_factory=lambda: AzimuthFault(math.pi / 4, math.pi / 12))
    noise_fraction: float = 0.01


SALLEN_KEY_SEGMENTS = ((151, 160), (211, 220), (501, 510))
SALLEN_KEY_SCHEDULE = FaultSchedule.from_duration(630, 0.02, SALLEN_KEY_SEGMENTS)

LLG_MULTI_SEGMENTS = ((51, 60), (91, 100), (121, 130))
LLG_SINGLE_SEGMENTS = ((101, 110),)

PRESETS: Dict[str, Dict[str, object]] = {
    SALLEN_KEY: {
        'reference-single': SallenKeyPreset(schedule=SALLEN_KEY_SCHEDULE, input_kind=SINGLE),
        'reference-double': SallenKeyPreset(schedule=SALLEN_KEY_SCHEDULE, input_kind=DOUBLE),
    },
    LLG: {
        'reference-multi': LlgPreset(schedule=FaultSchedule.from_duration(200, 0.8e-9, LLG_MULTI_SEGMENTS)),
        'reference-single-fault': LlgPreset(schedule=FaultSchedule.from_duration(200, 0.8e-9, LLG_SINGLE_SEGMENTS)),
    },
}

DEFAULT_PRESETS = {SALLEN_KEY: 'reference-single', LLG: 'reference-multi'}

# the published names of the same setups
ALIASES = {
    SALLEN_KEY: {'paper-single': 'reference-single', 'paper-double': 'reference-double'},
    LLG: {'paper-multi': 'reference-multi', 'paper-single-fault': 'reference-single-fault'},
}


def preset_names(kind):
    return [*PRESETS[kind], *ALIASES[kind]]


def get_preset(kind, name=None):
    if kind not in PRESETS:
        raise ScheduleError(f'unknown benchmark {kind!r}; expected one of {", ".join(KINDS)}')
    name = name or DEFAULT_PRESETS[kind]
    try:
        return PRESETS[kind][ALIASES[kind].get(name, name)]
    except KeyError:
        raise ScheduleError(
            f'unknown {kind} preset {name!r}; available: {", ".join(preset_names(kind))}'
        ) from None
