"""
Policy interface shared by neural policies and oracle heuristics.
"""
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import numpy as np

from diffengine import Node, ParamSet, Tape, concat
from envsim.models import ActionVector, ScenarioBatch, SystemState
from envsim.simulator import PeriodContext


class Policy:
    """
    Deterministic map from a batched SystemState to a feasible ActionVector.

    Subclasses implement ``act``; ``params`` holds every trainable array
    (empty for fixed heuristics).
    """

    architecture = 'policy'

    def __init__(self, params: Optional[ParamSet] = None):
        self.params = params if params is not None else ParamSet({})

    def act(self, tape: Tape, weights: Dict[str, Node], state: SystemState, context: PeriodContext) -> ActionVector:
        raise NotImplementedError

    def describe(self) -> dict:
        return {'architecture': self.architecture, 'parameters': self.params.size()}


@dataclass(frozen=True)
class StateLayout:
    """Shape of the raw state a policy was built for."""

    slots: int
    warehouse_slots: int = 0
    window: int = 0
    covariates: int = 0
    max_lead: int = 1

    @classmethod
    def from_batch(cls, batch: ScenarioBatch) -> 'StateLayout':
        initial = batch.initial
        return cls(
            slots=int(initial.pipeline.shape[2]),
            warehouse_slots=0 if initial.warehouse_pipeline is None else int(initial.warehouse_pipeline.shape[2]),
            window=0 if initial.window is None else int(initial.window.shape[-1]),
            covariates=0 if batch.covariates is None else int(batch.covariates.shape[-1]),
            max_lead=int(initial.pipeline.shape[2]) + 1,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def lead_time_one_hot(lead_times: np.ndarray, max_lead: int) -> np.ndarray:
    """(H, K) integer lead times to (H, K * max_lead) indicators."""
    rows, cols = lead_times.shape
    encoded = np.zeros((rows, cols, max_lead))
    np.put_along_axis(encoded, (lead_times - 1)[..., None], 1.0, axis=2)
    return encoded.reshape(rows, cols * max_lead)


def raw_features(
    tape: Tape,
    state: SystemState,
    context: PeriodContext,
    include_primitives: bool = False,
    include_window: bool = False,
    include_covariates: bool = False,
    max_lead: Optional[int] = None,
) -> Node:
    """
    Concatenate the raw state into one (H, F) input.

    Order: store on-hand, store pipeline slots (oldest first), warehouse
    on-hand and pipeline, then the optional blocks.
    """
    parts: List = [state.stores.on_hand] + list(state.stores.pipeline)
    if state.warehouse is not None:
        parts += [state.warehouse.on_hand] + list(state.warehouse.pipeline)
    rows = state.stores.on_hand.shape[0]
    if include_window and state.stores.window is not None:
        parts.append(tape.constant(state.stores.window.reshape(rows, -1)))
    if include_primitives:
        prims = context.primitives
        max_lead = max_lead or prims.max_lead_time
        parts += [
            tape.constant(prims.underage),
            tape.constant(prims.holding),
            tape.constant(lead_time_one_hot(prims.lead_times, max_lead)),
        ]
    if include_covariates:
        covariates = context.covariates()
        if covariates is not None:
            parts.append(tape.constant(np.asarray(covariates).reshape(rows, -1)))
    return concat(parts, axis=1)


def feature_width(
    instance,
    slots: int,
    warehouse_slots: int = 0,
    window: int = 0,
    include_primitives: bool = False,
    max_lead: int = 0,
    covariates: int = 0,
) -> int:
    """Width of ``raw_features`` for a given layout."""
    columns = instance.location_count
    width = columns * (1 + slots)
    if instance.has_warehouse:
        width += 1 + warehouse_slots
    width += columns * window
    if include_primitives:
        width += instance.underage.size + columns * (1 + max_lead)
    return width + covariates

