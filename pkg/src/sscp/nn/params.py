"""Named parameter containers, initialization, and bit-exact serialization.

A ``ParamBlock`` is an ordered name -> float64 ndarray mapping; one block
holds every array of one network. Optimizers, target-network blends, and
checkpoints all operate on whole blocks, which keeps the update and
serialization order fixed. Checkpoints are a UTF-8 manifest (array name,
shape, byte offset) followed by a single little-endian float64 payload, so
a save/load round trip reproduces every bit.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Iterator, Mapping
from pathlib import Path

import numpy as np

from sscp.nn.autodiff import Tensor
from sscp.seeding import stream_rng

Array = np.ndarray

_MAGIC = "sscp-params v1"


class ParamBlock:
    """Insertion-ordered mapping of parameter names to float64 arrays."""

    def __init__(self, arrays: Mapping[str, Array] | Iterable[tuple[str, Array]] = ()):
        self._arrays: dict[str, Array] = {}
        items = arrays.items() if isinstance(arrays, Mapping) else arrays
        for name, value in items:
            self[name] = value

    def __getitem__(self, name: str) -> Array:
        return self._arrays[name]

    def __setitem__(self, name: str, value: Array) -> None:
        if "\n" in name or "\t" in name:
            raise ValueError(f"parameter name {name!r} contains manifest delimiters")
        self._arrays[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __len__(self) -> int:
        return len(self._arrays)

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def names(self) -> tuple[str, ...]:
        return tuple(self._arrays)

    def items(self) -> Iterable[tuple[str, Array]]:
        return self._arrays.items()

    def copy(self) -> "ParamBlock":
        return ParamBlock((n, a.copy()) for n, a in self.items())

    def n_params(self) -> int:
        return sum(a.size for a in self._arrays.values())

    def update(self, other: "ParamBlock" | Mapping[str, Array]) -> None:
        items = other.items() if not isinstance(other, Mapping) else other.items()
        for name, value in items:
            self[name] = value


class LiveParams:
    """A ParamBlock bound into the autodiff graph for one forward/backward pass.

    With ``trainable=True`` each array becomes a gradient leaf; otherwise the
    tensors are constants and the pass records no tape through them.
    """

    def __init__(self, block: ParamBlock, trainable: bool = True):
        self.block = block
        self.trainable = trainable
        self.tensors: dict[str, Tensor] = {
            name: Tensor(arr, requires_grad=trainable) for name, arr in block.items()
        }

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def grads(self) -> dict[str, Array]:
        """Gradient per array after backward(); zeros for untouched leaves."""
        out: dict[str, Array] = {}
        for name, t in self.tensors.items():
            if t.grad is None:
                out[name] = np.zeros_like(t.data)
            else:
                out[name] = t.grad
        return out


def lecun_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Array:
    """Uniform(-limit, limit) with limit = sqrt(3 / fan_in)."""
    limit = math.sqrt(3.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def init_affine(
    block: ParamBlock, prefix: str, n_in: int, n_out: int, master_seed: int
) -> None:
    """Add weight and bias for one affine layer, each from its own seed stream."""
    rng = stream_rng(master_seed, prefix, "weight")
    block[f"{prefix}.w"] = lecun_uniform(rng, (n_in, n_out), fan_in=n_in)
    block[f"{prefix}.b"] = np.zeros(n_out)


def init_mlp(
    block: ParamBlock, prefix: str, sizes: tuple[int, ...], master_seed: int
) -> None:
    """Affine stack ``sizes[0] -> ... -> sizes[-1]`` named ``{prefix}.l{i}``."""
    for i in range(len(sizes) - 1):
        init_affine(block, f"{prefix}.l{i}", sizes[i], sizes[i + 1], master_seed)


def save_arrays(path: str | Path, arrays: Mapping[str, Array]) -> None:
    """Write a manifest-plus-blob checkpoint. Order follows the mapping."""
    names = list(arrays)
    payload = bytearray()
    lines = [_MAGIC]
    for name in names:
        arr = np.asarray(arrays[name], dtype=np.float64)
        shape = ",".join(str(n) for n in arr.shape)
        lines.append(f"{name}\t{shape}\t{len(payload)}")
        payload.extend(arr.astype("<f8", copy=False).tobytes())
    header = ("\n".join(lines) + "\n\n").encode("utf-8")
    Path(path).write_bytes(header + bytes(payload))


def load_arrays(path: str | Path) -> dict[str, Array]:
    """Inverse of :func:`save_arrays`; values are bit-identical to what was saved."""
    raw = Path(path).read_bytes()
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise ValueError(f"{path}: missing manifest terminator")
    header = raw[:sep].decode("utf-8").split("\n")
    if not header or header[0] != _MAGIC:
        raise ValueError(f"{path}: bad magic line {header[:1]!r}")
    payload = raw[sep + 2 :]
    out: dict[str, Array] = {}
    for line in header[1:]:
        name, shape_csv, offset_s = line.split("\t")
        shape = tuple(int(p) for p in shape_csv.split(",") if p)
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        offset = int(offset_s)
        flat = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        out[name] = flat.reshape(shape).astype(np.float64, copy=True)
    return out


def save_checkpoint(path: str | Path, blocks: Mapping[str, ParamBlock]) -> None:
    """Serialize several named blocks into one file ('block/array' keys)."""
    merged: dict[str, Array] = {}
    for block_name, block in blocks.items():
        if "/" in block_name:
            raise ValueError(f"block name {block_name!r} may not contain '/'")
        for name, arr in block.items():
            merged[f"{block_name}/{name}"] = arr
    save_arrays(path, merged)


def load_checkpoint(path: str | Path) -> dict[str, ParamBlock]:
    blocks: dict[str, ParamBlock] = {}
    for key, arr in load_arrays(path).items():
        block_name, _, array_name = key.partition("/")
        blocks.setdefault(block_name, ParamBlock())[array_name] = arr
    return blocks
