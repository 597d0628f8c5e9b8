"""
Fully connected networks on top of diffengine.
"""
from typing import Dict, List, Sequence, Tuple

import numpy as np

from diffengine import Node, activation, affine


class MLP:
    """
    ELU multilayer perceptron with a linear output layer.

    The first layer may read several input blocks, each with its own weight
    matrix; block pre-activations are summed, so a block of shape (H, 1, n)
    broadcasts against one of shape (H, K, m).
    """

    def __init__(self, prefix: str, input_blocks: Sequence[Tuple[str, int]], hidden: Sequence[int], output: int):
        self.prefix = prefix
        self.input_blocks = [(name, int(size)) for name, size in input_blocks if size > 0]
        self.hidden = [int(units) for units in hidden]
        self.output = int(output)

    @property
    def fan_in(self) -> int:
        return sum(size for _, size in self.input_blocks)

    def initial_arrays(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization for every layer."""
        arrays = {}
        widths = self.hidden + [self.output]
        bound = 1.0 / np.sqrt(max(self.fan_in, 1))
        for name, size in self.input_blocks:
            arrays[f'{self.prefix}.w0.{name}'] = rng.uniform(-bound, bound, size=(size, widths[0]))
        arrays[f'{self.prefix}.b0'] = rng.uniform(-bound, bound, size=widths[0])
        for layer in range(1, len(widths)):
            bound = 1.0 / np.sqrt(widths[layer - 1])
            arrays[f'{self.prefix}.w{layer}'] = rng.uniform(-bound, bound, size=(widths[layer - 1], widths[layer]))
            arrays[f'{self.prefix}.b{layer}'] = rng.uniform(-bound, bound, size=widths[layer])
        return arrays

    def forward(self, weights: Dict[str, Node], inputs: Dict[str, Node]) -> Node:
        h = None
        for name, _ in self.input_blocks:
            part = affine(inputs[name], weights[f'{self.prefix}.w0.{name}'])
            h = part if h is None else h + part
        h = h + weights[f'{self.prefix}.b0']
        layers: List[int] = self.hidden + [self.output]
        for layer in range(1, len(layers)):
            h = activation(h, 'elu')
            h = affine(h, weights[f'{self.prefix}.w{layer}'], weights[f'{self.prefix}.b{layer}'])
        return h


def merge_arrays(*parts: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Union of several networks' parameter arrays; a name may appear only once."""
    merged: Dict[str, np.ndarray] = {}
    for part in parts:
        for name, array in part.items():
            if name in merged:
                raise ValueError(f'duplicate parameter name {name!r}')
            merged[name] = array
    return merged
