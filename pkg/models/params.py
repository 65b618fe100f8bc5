# models/params.py

"""
Named parameter tensors of the GroupSet model.

Tensor order is fixed by parameter_specs and is the order used everywhere a
flat view is needed (checkpoints, gradient checks, optimizer moments).
"""

from collections import OrderedDict
from typing import Iterator, List, Optional, Tuple

import numpy as np

from core import HyperParams
from errors import InputError

# (prefix, widths after the input width) of the stacked heads; the last
# layer of each has no activation
HEAD_LAYOUT = (
    ("act", "N_v"),
    ("size", 1),
    ("pts", "2M"),
    ("cls", 1),
    ("box", 4),
    ("actn", "N_a"),
)
MLP_HEADS = {"size", "pts", "box"}


def _head_width(hp: HyperParams, width) -> int:
    if width == "N_v":
        return hp.N_v
    if width == "N_a":
        return hp.N_a
    if width == "2M":
        return 2 * hp.M
    return int(width)


def parameter_specs(hp: HyperParams) -> List[Tuple[str, Tuple[int, ...]]]:
    """Ordered (name, shape) of every tensor for the given sizes."""
    E = hp.D_emb
    specs = [
        ("queries", (hp.N_q, E)),
        ("ref_logits", (hp.N_q, 2)),
        ("attn_wq", (E, E)),
        ("attn_wk", (hp.D_tok, E)),
        ("attn_wv", (hp.D_tok, E)),
        ("attn_wa", (hp.D_tok, E)),
        ("ffn_w1", (E, E)),
        ("ffn_b1", (E,)),
        ("ffn_w2", (E, E)),
        ("ffn_b2", (E,)),
    ]
    for prefix, width in HEAD_LAYOUT:
        out = _head_width(hp, width)
        if prefix in MLP_HEADS:
            specs += [
                (f"{prefix}_w1", (E, E)),
                (f"{prefix}_b1", (E,)),
                (f"{prefix}_w2", (E, E)),
                (f"{prefix}_b2", (E,)),
                (f"{prefix}_w3", (E, out)),
                (f"{prefix}_b3", (out,)),
            ]
        else:
            specs += [(f"{prefix}_w", (E, out)), (f"{prefix}_b", (out,))]
    return specs


class ModelParams:
    """Ordered mapping of tensor name to float64 array."""

    def __init__(self, tensors: "OrderedDict[str, np.ndarray]"):
        self._tensors = tensors

    @classmethod
    def init(cls, hp: HyperParams, seed: int = 0) -> "ModelParams":
        """
        Seeded initialization.

        Weights are uniform in +-1/sqrt(fan_in), biases zero, reference
        logits uniform in [-2, 2] and query embeddings uniform in [-1, 1].
        """
        rng = np.random.default_rng(seed)
        tensors = OrderedDict()
        for name, shape in parameter_specs(hp):
            if name == "queries":
                tensors[name] = rng.uniform(-1.0, 1.0, size=shape)
            elif name == "ref_logits":
                tensors[name] = rng.uniform(-2.0, 2.0, size=shape)
            elif len(shape) == 1:
                tensors[name] = np.zeros(shape)
            else:
                bound = 1.0 / np.sqrt(shape[0])
                tensors[name] = rng.uniform(-bound, bound, size=shape)
        return cls(tensors)

    @classmethod
    def zeros(cls, hp: HyperParams) -> "ModelParams":
        return cls(OrderedDict((name, np.zeros(shape)) for name, shape in parameter_specs(hp)))

    @classmethod
    def from_flat(cls, hp: HyperParams, flat: np.ndarray) -> "ModelParams":
        """
        Rebuild tensors from a flat vector in canonical order.

        Raises:
            InputError: If the vector length does not fit the sizes in hp
        """
        flat = np.asarray(flat, dtype=np.float64).ravel()
        specs = parameter_specs(hp)
        expected = sum(int(np.prod(shape)) for _, shape in specs)
        if flat.size != expected:
            raise InputError(f"parameter vector has {flat.size} values, expected {expected}")
        tensors = OrderedDict()
        offset = 0
        for name, shape in specs:
            n = int(np.prod(shape))
            tensors[name] = flat[offset:offset + n].reshape(shape).copy()
            offset += n
        return cls(tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self._tensors or self._tensors[name].shape != np.shape(value):
            raise InputError(f"unknown tensor or shape mismatch: {name}")
        self._tensors[name] = np.asarray(value, dtype=np.float64)

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self) -> List[str]:
        return list(self._tensors)

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self._tensors.values()])

    def copy(self) -> "ModelParams":
        return type(self)(OrderedDict((name, t.copy()) for name, t in self._tensors.items()))

    def zeros_like(self) -> "ModelParams":
        return type(self)(OrderedDict((name, np.zeros_like(t)) for name, t in self._tensors.items()))

    def all_finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self._tensors.values())

    def first_non_finite(self) -> Optional[str]:
        for name, t in self._tensors.items():
            if not np.isfinite(t).all():
                return name
        return None

    def array_equal(self, other: "ModelParams") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(t, other[name]) for name, t in self._tensors.items()
        )


class GradientBuffer(ModelParams):
    """Accumulated derivatives of the total loss, one array per parameter tensor."""

    @classmethod
    def like(cls, params: ModelParams) -> "GradientBuffer":
        return cls(OrderedDict((name, np.zeros_like(t)) for name, t in params.items()))

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        self._tensors[name] += grad

    def scale(self, factor: float) -> None:
        for t in self._tensors.values():
            t *= factor
