"""
Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation on a tensor that requires a gradient records a node holding its
inputs and a backward rule. Nodes carry a global creation sequence number, so
sorting the nodes reachable from a loss by that number yields the topological
order of the tape. ``backward`` consumes the tape: running it again on the same
graph raises ``ContractError``.
"""
import itertools
import logging

import numpy as np

from .exceptions import ContractError, NonFiniteError

logger = logging.getLogger(__name__)

_sequence = itertools.count()


class Node:
    __slots__ = ('seq', 'op', 'inputs', 'backward', 'released')

    def __init__(self, op, inputs, backward):
        self.seq = next(_sequence)
        self.op = op
        self.inputs = inputs
        self.backward = backward
        self.released = False


class Tensor:
    __slots__ = ('data', 'requires_grad', 'grad', 'node', '__weakref__')

    # keeps numpy from hijacking reflected operators such as ndarray @ Tensor
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self.node is None

    def numpy(self):
        return self.data.copy()

    def item(self):
        if self.data.size != 1:
            raise ContractError(f'item() needs a single element, got shape {self.shape}')
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ', requires_grad=True' if self.requires_grad else ''
        return f'Tensor(shape={self.shape}{flag})'

    def __len__(self):
        return self.shape[0]

    # Operators delegate to numeric.ops; imported lazily to avoid a cycle.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops
        return ops.matmul(other, self)

    def __getitem__(self, key):
        from . import ops
        return ops.index(self, key)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self):
        from . import ops
        return ops.total(self)


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def make_result(op, data, inputs, backward):
    """Wrap an op's output; record a node only when some input needs a gradient."""
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f'{op} produced non-finite values')
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad)
    if needs_grad:
        out.node = Node(op, inputs, backward)
    return out


class Tape:
    """The recorded operations reachable from a loss, in topological order."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def from_loss(cls, loss):
        seen = set()
        nodes = []
        stack = [loss]
        while stack:
            tensor = stack.pop()
            node = tensor.node
            if node is None or id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append((node, tensor))
            stack.extend(node.inputs)
        nodes.sort(key=lambda pair: pair[0].seq)
        return cls(nodes)

    def __len__(self):
        return len(self.nodes)


def backward(loss):
    """Populate ``grad`` on every trainable leaf reachable from a scalar loss."""
    if loss.data.size != 1:
        raise ContractError(f'backward needs a scalar loss, got shape {loss.shape}')
    if loss.node is None:
        raise ContractError('loss is not on a tape (no input requires a gradient)')
    if loss.node.released:
        raise ContractError('backward already ran on this graph; run a fresh forward pass')

    tape = Tape.from_loss(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node, tensor in reversed(tape.nodes):
        grad_out = grads.pop(id(tensor), None)
        if grad_out is None:
            continue
        input_grads = node.backward(grad_out)
        for inp, grad in zip(node.inputs, input_grads):
            if grad is None or not inp.requires_grad:
                continue
            if inp.node is None:
                inp.grad = grad.copy() if inp.grad is None else inp.grad + grad
            else:
                key = id(inp)
                grads[key] = grad if key not in grads else grads[key] + grad
    for node, _ in tape.nodes:
        node.released = True
        node.backward = None
    logger.debug('backward visited %d nodes', len(tape))


class ParamStore:
    """Named parameters keyed by dotted name, e.g. ``large.layer0.wq``.

    The trainable flag of an entry is its tensor's ``requires_grad``.
    """

    def __init__(self):
        self._params = {}

    def add(self, name, value, trainable=True):
        if name in self._params:
            raise ContractError(f'parameter {name!r} already registered')
        tensor = value if isinstance(value, Tensor) else Tensor(value)
        tensor.requires_grad = trainable
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def trainable(self):
        return [(name, t) for name, t in self._params.items() if t.requires_grad]

    def is_frozen(self):
        return not any(t.requires_grad for t in self._params.values())

    def freeze(self, prefix=''):
        for name, tensor in self._params.items():
            if name.startswith(prefix):
                tensor.requires_grad = False
                tensor.grad = None

    def zero_grad(self):
        for _, tensor in self.trainable():
            tensor.grad = np.zeros_like(tensor.data)

    def clear_grad(self):
        for tensor in self._params.values():
            tensor.grad = None

    def num_parameters(self):
        return int(sum(t.size for t in self._params.values()))

    def subset(self, prefix):
        store = ParamStore()
        store._params = {n: t for n, t in self._params.items() if n.startswith(prefix)}
        return store

    @classmethod
    def merge(cls, *stores):
        merged = cls()
        for store in stores:
            for name, tensor in store.items():
                if name in merged._params:
                    raise ContractError(f'parameter {name!r} present in two stores')
                merged._params[name] = tensor
        return merged

    def state_dict(self):
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state_dict(self, arrays, strict=True):
        missing = [n for n in self._params if n not in arrays]
        if strict and missing:
            raise ContractError(f'missing parameters: {", ".join(missing)}')
        for name, tensor in self._params.items():
            if name not in arrays:
                continue
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise ContractError(
                    f'{name}: stored shape {value.shape} does not match {tensor.shape}')
            tensor.data = value.copy()
