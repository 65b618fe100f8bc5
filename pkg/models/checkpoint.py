# models/checkpoint.py

"""
Checkpoint files.

Layout:
    8 bytes   little-endian uint64, length of the JSON header in bytes
    header    UTF-8 JSON (CheckpointHeader)
    payload   little-endian float64: every tensor in header order, then the
              optimizer first moments and second moments in the same order
              when optimizer.has_moments is true
"""

import json
import logging
import os
import struct
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from core import HyperParams
from errors import DatasetIOError, InputError
from models.optim import AdamState
from models.params import ModelParams, parameter_specs

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "groupset-checkpoint"
CHECKPOINT_VERSION = 1
_LENGTH = struct.Struct("<Q")


class TensorEntry(BaseModel):
    name: str
    shape: List[int]


class OptimizerEntry(BaseModel):
    step: int = 0
    has_moments: bool = False


class CheckpointHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format: str = CHECKPOINT_FORMAT
    version: int = CHECKPOINT_VERSION
    hyper_params: HyperParams
    step: int
    tensors: List[TensorEntry]
    optimizer: OptimizerEntry
    train_config: Optional[Dict[str, Any]] = None


@dataclass
class Checkpoint:
    header: CheckpointHeader
    params: ModelParams
    state: Optional[AdamState]

    @property
    def hyper_params(self) -> HyperParams:
        return self.header.hyper_params

    @property
    def step(self) -> int:
        return self.header.step


def save_checkpoint(
    path: str,
    hp: HyperParams,
    params: ModelParams,
    step: int,
    state: Optional[AdamState] = None,
    train_config: Optional[Dict[str, Any]] = None,
) -> None:
    """
    Write a checkpoint; the file is replaced atomically.

    Raises:
        DatasetIOError: If the file cannot be written
    """
    header = CheckpointHeader(
        hyper_params=hp,
        step=step,
        tensors=[TensorEntry(name=name, shape=list(t.shape)) for name, t in params.items()],
        optimizer=OptimizerEntry(step=state.step if state else 0, has_moments=state is not None),
        train_config=train_config,
    )
    header_bytes = header.model_dump_json().encode("utf-8")
    chunks = [params.flatten()]
    if state is not None:
        chunks += [state.m.flatten(), state.v.flatten()]
    payload = np.concatenate(chunks).astype("<f8").tobytes()

    tmp_path = f"{path}.tmp"
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(tmp_path, "wb") as f:
            f.write(_LENGTH.pack(len(header_bytes)))
            f.write(header_bytes)
            f.write(payload)
        os.replace(tmp_path, path)
    except OSError as e:
        raise DatasetIOError(f"cannot write checkpoint ({e.strerror})", path) from e
    logger.debug("saved checkpoint step %d to %s", step, path)


def load_checkpoint(path: str) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        DatasetIOError: If the file cannot be read
        InputError: If the file is not a valid checkpoint
    """
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise DatasetIOError(f"cannot read checkpoint ({e.strerror})", path) from e

    if len(data) < _LENGTH.size:
        raise InputError(f"{path}: truncated checkpoint")
    (header_len,) = _LENGTH.unpack_from(data)
    body = data[_LENGTH.size:_LENGTH.size + header_len]
    if len(body) != header_len:
        raise InputError(f"{path}: truncated checkpoint header")
    try:
        header = CheckpointHeader.model_validate(json.loads(body.decode("utf-8")))
    except (ValueError, ValidationError) as e:
        raise InputError(f"{path}: invalid checkpoint header") from e
    if header.format != CHECKPOINT_FORMAT or header.version != CHECKPOINT_VERSION:
        raise InputError(f"{path}: unsupported checkpoint {header.format} v{header.version}")

    hp = header.hyper_params
    expected = [(name, list(shape)) for name, shape in parameter_specs(hp)]
    if [(t.name, t.shape) for t in header.tensors] != expected:
        raise InputError(f"{path}: tensor list does not match hyper-parameters")

    raw = data[_LENGTH.size + header_len:]
    if len(raw) % 8:
        raise InputError(f"{path}: truncated checkpoint payload")
    payload = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    n = sum(int(np.prod(shape)) for _, shape in expected)
    want = n * (3 if header.optimizer.has_moments else 1)
    if payload.size != want:
        raise InputError(f"{path}: payload has {payload.size} values, expected {want}")

    params = ModelParams.from_flat(hp, payload[:n])
    state = None
    if header.optimizer.has_moments:
        state = AdamState(
            step=header.optimizer.step,
            m=ModelParams.from_flat(hp, payload[n:2 * n]),
            v=ModelParams.from_flat(hp, payload[2 * n:]),
        )
    return Checkpoint(header=header, params=params, state=state)
