"""Block-structured classifiers with freezing, head swapping and snapshots.

A :class:`BlockNet` is an ordered list of blocks followed by a linear head.
Parameters are named ``blocks.<i>.<name>`` and ``head.<name>``; those names
are the keys of a :class:`ModelState` and of the binary checkpoint format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from .diffcore import ShapeError, Tensor, conv2d, flatten, linear, max_pool2d, relu


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.weight = _he_uniform(rng, (out_dim, in_dim), in_dim)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)
        self.in_dim, self.out_dim = in_dim, out_dim

    def params(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class DenseBlock:
    """linear -> relu"""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.fc = Linear(in_dim, out_dim, rng)

    def params(self) -> dict[str, Tensor]:
        return self.fc.params()

    def __call__(self, x: Tensor) -> Tensor:
        return relu(self.fc(x))


class ConvBlock:
    """3x3 conv (padding 1) -> relu -> 2x2 max-pool"""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator):
        fan_in = in_ch * 9
        self.weight = _he_uniform(rng, (out_ch, in_ch, 3, 3), fan_in)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        return max_pool2d(relu(conv2d(x, self.weight, self.bias, stride=1, padding=1)), 2)


@dataclass(frozen=True)
class ModelState:
    """Immutable name -> array snapshot of every model parameter."""

    params: Mapping[str, np.ndarray]

    def __post_init__(self):
        frozen = {}
        for name, arr in self.params.items():
            a = np.array(arr, dtype=np.float64, copy=True)
            a.setflags(write=False)
            frozen[name] = a
        object.__setattr__(self, "params", MappingProxyType(frozen))

    def names(self) -> list[str]:
        return list(self.params)

    def backbone(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.params.items() if k.startswith("blocks.")}

    def equals(self, other: "ModelState") -> bool:
        return self.params.keys() == other.params.keys() and all(
            np.array_equal(v, other.params[k]) for k, v in self.params.items()
        )

    def save(self, path) -> None:
        save_state(self, path)

    @classmethod
    def load(cls, path) -> "ModelState":
        return load_state(path)


class BlockNet:
    """Backbone blocks plus a linear classification head.

    ``input_shape`` excludes the batch axis: ``(d,)`` for vectors or
    ``(C, H, W)`` for images.
    """

    def __init__(self, blocks: Sequence, feature_dim: int, n_classes: int,
                 input_shape: tuple[int, ...], seed: int = 0):
        if n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {n_classes}")
        self.blocks = list(blocks)
        self.feature_dim = feature_dim
        self.input_shape = tuple(input_shape)
        self.frozen_blocks = 0
        self.head = Linear(feature_dim, n_classes, np.random.default_rng(seed))

    @property
    def output_dim(self) -> int:
        return self.feature_dim

    @property
    def n_classes(self) -> int:
        return self.head.out_dim

    # parameters -------------------------------------------------------
    def named_parameters(self) -> dict[str, Tensor]:
        named = {}
        for i, block in enumerate(self.blocks):
            for n, t in block.params().items():
                named[f"blocks.{i}.{n}"] = t
        for n, t in self.head.params().items():
            named[f"head.{n}"] = t
        return named

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def backbone_parameters(self) -> list[Tensor]:
        return [t for n, t in self.named_parameters().items() if n.startswith("blocks.")]

    def head_parameters(self) -> list[Tensor]:
        return list(self.head.params().values())

    def trainable_parameters(self) -> list[Tensor]:
        return [t for t in self.parameters() if t.requires_grad]

    def set_trainable(self, frozen_block_count: int) -> None:
        """Freeze blocks ``[0, k)``; everything after them stays trainable."""
        k = frozen_block_count
        if not 0 <= k <= len(self.blocks):
            raise ValueError(f"frozen_block_count must be in [0, {len(self.blocks)}], got {k}")
        for i, block in enumerate(self.blocks):
            for t in block.params().values():
                t.requires_grad = i >= k
        for t in self.head.params().values():
            t.requires_grad = True
        self.frozen_blocks = k

    def freeze_backbone(self) -> None:
        self.set_trainable(len(self.blocks))

    # forward ----------------------------------------------------------
    def _check_input(self, x: np.ndarray) -> None:
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(
                f"input shape {tuple(x.shape[1:])} does not match model input {self.input_shape}"
            )

    def features(self, x, start: int = 0, stop: int | None = None) -> Tensor:
        """Run blocks ``[start, stop)``; the final block output is flattened."""
        stop = len(self.blocks) if stop is None else stop
        h = x if isinstance(x, Tensor) else Tensor(x)
        if start == 0:
            self._check_input(h.data)
        for block in self.blocks[start:stop]:
            h = block(h)
        if stop == len(self.blocks) and h.data.ndim > 2:
            h = flatten(h)
        return h

    def forward(self, x, start: int = 0) -> Tensor:
        """Logits ``[B, K]``; ``start`` > 0 means ``x`` is the output of block ``start-1``."""
        return self.head(self.features(x, start=start))

    __call__ = forward

    def frozen_prefix(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """Outputs of the frozen blocks, computed without recording a graph."""
        k = self.frozen_blocks
        if k == 0:
            return np.asarray(x, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x)
        outs = [self.features(x[i : i + batch_size], 0, k).data for i in range(0, len(x), batch_size)]
        return np.concatenate(outs) if outs else np.zeros((0,))

    def predict_logits(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        with no_grad(self):
            outs = [self.forward(x[i : i + batch_size]).data for i in range(0, len(x), batch_size)]
        return np.concatenate(outs) if outs else np.zeros((0, self.n_classes))

    # head swap, snapshot, restore --------------------------------------
    def swap_head(self, new_k: int, seed: int) -> None:
        if new_k < 2:
            raise ValueError(f"new head width must be >= 2, got {new_k}")
        self.head = Linear(self.feature_dim, new_k, np.random.default_rng(seed))

    def snapshot(self) -> ModelState:
        return ModelState({n: t.data for n, t in self.named_parameters().items()})

    def restore(self, state: ModelState, backbone_only: bool = False) -> None:
        """Copy ``state`` into the parameters, bit-exact.

        With ``backbone_only`` the head is left alone and head entries of the
        state are ignored, so a 4-way pretext state can reset a K-way model.
        """
        own = self.named_parameters()
        theirs = dict(state.params)
        if backbone_only:
            own = {n: t for n, t in own.items() if n.startswith("blocks.")}
            theirs = {n: a for n, a in theirs.items() if n.startswith("blocks.")}
        mismatched = sorted(set(own) ^ set(theirs))
        mismatched += sorted(
            n for n in set(own) & set(theirs) if own[n].data.shape != theirs[n].shape
        )
        if mismatched:
            raise ValueError(f"state does not match model; mismatched parameters: {mismatched}")
        for n, t in own.items():
            t.data = np.array(theirs[n], dtype=np.float64, copy=True)
            t.grad = None


class no_grad:
    """Temporarily mark every parameter of a model as not requiring grad."""

    def __init__(self, model: BlockNet):
        self.model = model

    def __enter__(self):
        self._saved = [(t, t.requires_grad) for t in self.model.parameters()]
        for t, _ in self._saved:
            t.requires_grad = False
        return self

    def __exit__(self, *exc):
        for t, flag in self._saved:
            t.requires_grad = flag
        return False


def build_mlp(input_dim: int, hidden_dims: Sequence[int], n_classes: int, seed: int = 0) -> BlockNet:
    """One dense+relu block per hidden layer, then a linear head."""
    if not hidden_dims:
        raise ValueError("hidden_dims must not be empty")
    if input_dim < 1 or any(h < 1 for h in hidden_dims):
        raise ValueError(f"dimensions must be positive, got {input_dim} and {list(hidden_dims)}")
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden_dims]
    blocks = [DenseBlock(a, b, rng) for a, b in zip(dims, dims[1:])]
    return BlockNet(blocks, dims[-1], n_classes, (input_dim,), seed=seed + 1)


def build_small_cnn(in_channels: int, n_classes: int, image_size: int = 28,
                    channels: Sequence[int] = (8, 16), seed: int = 0) -> BlockNet:
    """Conv blocks (each halves the resolution) followed by a linear head."""
    if not channels:
        raise ValueError("channels must not be empty")
    if image_size % (2 ** len(channels)):
        raise ValueError(f"image_size {image_size} not divisible by 2**{len(channels)}")
    rng = np.random.default_rng(seed)
    dims = [in_channels, *channels]
    blocks = [ConvBlock(a, b, rng) for a, b in zip(dims, dims[1:])]
    side = image_size // 2 ** len(channels)
    return BlockNet(blocks, channels[-1] * side * side, n_classes,
                    (in_channels, image_size, image_size), seed=seed + 1)


def build_network(X: np.ndarray, n_classes: int, hidden_dims: Sequence[int] = (16, 16),
                  channels: Sequence[int] = (8, 16), seed: int = 0) -> BlockNet:
    """MLP for (N, d) inputs, small CNN for square (N, C, H, W) images."""
    if X.ndim == 2:
        return build_mlp(X.shape[1], list(hidden_dims), n_classes, seed=seed)
    if X.ndim != 4 or X.shape[2] != X.shape[3]:
        raise ValueError(f"expected (N, d) vectors or square (N, C, H, W) images, got shape {X.shape}")
    return build_small_cnn(X.shape[1], n_classes, image_size=X.shape[2], channels=tuple(channels), seed=seed)


# binary checkpoint format ---------------------------------------------
# uint32 count, then per parameter: uint32 name length, utf-8 name,
# uint32 rank, rank x uint32 dims, float64 values; all little-endian.

def save_state(state: ModelState, path) -> None:
    parts = [struct.pack("<I", len(state.params))]
    for name, arr in state.params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_state(path) -> ModelState:
    buf = Path(path).read_bytes()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(buf):
            raise ValueError(f"{path}: truncated checkpoint at byte {off}")
        chunk = buf[off : off + n]
        off += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        params[name] = np.frombuffer(take(8 * n), dtype="<f8").reshape(dims).astype(np.float64)
    if off != len(buf):
        raise ValueError(f"{path}: {len(buf) - off} trailing bytes after {count} parameters")
    return ModelState(params)
