from diffengine.params import Adam, ParamSet
from diffengine.tape import (
    Node,
    ShapeError,
    Tape,
    activation,
    affine,
    backward,
    columns,
    concat,
    gradients,
    mean,
    minimum,
    piecewise_linear,
    relu_pos,
    reshape,
    softmax_with_reserve,
    stack,
    stop_gradient,
    total,
)

__all__ = [
    'Adam', 'ParamSet', 'Node', 'ShapeError', 'Tape', 'activation', 'affine',
    'backward', 'columns', 'concat', 'gradients', 'mean', 'minimum',
    'piecewise_linear', 'relu_pos', 'reshape', 'softmax_with_reserve', 'stack',
    'stop_gradient', 'total',
]
