"""
Named parameter arrays and the Adam optimizer that updates them.
"""
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np

from diffengine.tape import Node, ShapeError, Tape


class ParamSet:
    """
    Flat collection of named float64 arrays with Adam moment accumulators.

    Shapes are fixed at construction. Reads are safe from several threads
    between updates; updates must not overlap with reads.
    """

    def __init__(self, arrays: Mapping[str, np.ndarray]):
        self._arrays: Dict[str, np.ndarray] = {}
        for name, array in arrays.items():
            self._arrays[name] = np.array(array, dtype=np.float64)
        self.first_moment = {name: np.zeros_like(a) for name, a in self._arrays.items()}
        self.second_moment = {name: np.zeros_like(a) for name, a in self._arrays.items()}
        self.step_count = 0

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(self._arrays)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __len__(self) -> int:
        return len(self._arrays)

    def items(self) -> Iterable[Tuple[str, np.ndarray]]:
        return self._arrays.items()

    def size(self) -> int:
        return int(sum(a.size for a in self._arrays.values()))

    def bind(self, tape: Tape) -> Dict[str, Node]:
        """Register every array as a named leaf on ``tape``."""
        return {name: tape.variable(array, name=name) for name, array in self._arrays.items()}

    def assign(self, arrays: Mapping[str, np.ndarray]) -> None:
        for name, array in arrays.items():
            if name not in self._arrays:
                raise KeyError(f'unknown parameter {name!r}')
            if np.shape(array) != self._arrays[name].shape:
                raise ShapeError(
                    f'{name}: expected shape {self._arrays[name].shape}, got {np.shape(array)}'
                )
            self._arrays[name] = np.array(array, dtype=np.float64)

    def snapshot(self) -> Dict[str, np.ndarray]:
        """Copy of the current values (moments excluded)."""
        return {name: array.copy() for name, array in self._arrays.items()}

    def copy(self) -> 'ParamSet':
        clone = ParamSet(self._arrays)
        clone.first_moment = {n: m.copy() for n, m in self.first_moment.items()}
        clone.second_moment = {n: v.copy() for n, v in self.second_moment.items()}
        clone.step_count = self.step_count
        return clone


class Adam:
    """Adam with bias correction; moments live on the ParamSet."""

    def __init__(
        self,
        params: ParamSet,
        learning_rate: float = 1e-3,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1, self.beta2 = betas
        self.eps = eps

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        params = self.params
        params.step_count += 1
        t = params.step_count
        correction1 = 1.0 - self.beta1 ** t
        correction2 = 1.0 - self.beta2 ** t
        updated = {}
        for name, value in params.items():
            g = grads[name]
            m = self.beta1 * params.first_moment[name] + (1.0 - self.beta1) * g
            v = self.beta2 * params.second_moment[name] + (1.0 - self.beta2) * g * g
            params.first_moment[name] = m
            params.second_moment[name] = v
            m_hat = m / correction1
            v_hat = v / correction2
            updated[name] = value - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
        params.assign(updated)
