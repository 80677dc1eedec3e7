"""Sequence descriptor composers: grouping, fusion and recurrent.

Grouping concatenates per-frame descriptors and has no parameters of its
own (its learnable part is a per-frame affine head trained on single
frames).  Fusion is an affine map on the stacked window.  Recurrent is a
single LSTM cell applied frame by frame; the hidden state is the
descriptor.  The learnable composers also expose exact analytic gradients
(backprop through time for the LSTM) so the trainer never needs a
framework.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .core import atomic_write_bytes

SPW_MAGIC = b"SPW1"
KIND_GROUPING_HEAD = 0
KIND_FUSION = 1
KIND_RECURRENT = 2

KIND_NAMES = {KIND_GROUPING_HEAD: "grouping", KIND_FUSION: "fusion",
              KIND_RECURRENT: "recurrent"}
KIND_TAGS = {v: k for k, v in KIND_NAMES.items()}


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# grouping


@dataclass(frozen=True)
class GroupingComposer:
    """Concatenation of n per-frame descriptors of size d."""

    n: int
    d: int

    @property
    def output_dim(self) -> int:
        return self.n * self.d

    def compose(self, frames: Sequence[np.ndarray]) -> np.ndarray:
        if len(frames) != self.n:
            raise ValueError(f"expected {self.n} frames, got {len(frames)}")
        return compose_grouping(frames)


def compose_grouping(frames: Sequence[np.ndarray]) -> np.ndarray:
    """Order-preserving concatenation; out[i*d + j] = frames[i][j]."""
    if len(frames) == 0:
        raise ValueError("cannot compose an empty sequence")
    d = len(frames[0])
    if any(len(f) != d for f in frames):
        raise ValueError("frames have mixed dimensions")
    return np.concatenate([np.asarray(f, dtype=np.float64) for f in frames])


# ---------------------------------------------------------------------------
# fusion


@dataclass
class FusionParams:
    """Affine combiner: y = W @ concat(frames) + b."""

    W: np.ndarray  # (d_out, n * d_in)
    b: np.ndarray  # (d_out,)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.ndim != 1 or self.W.shape[0] != self.b.shape[0]:
            raise ValueError(f"inconsistent fusion shapes W{self.W.shape} b{self.b.shape}")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValueError("non-finite fusion parameters")

    @property
    def d_out(self) -> int:
        return self.W.shape[0]

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @classmethod
    def init(cls, n: int, d_in: int, d_out: int, rng: np.random.Generator) -> "FusionParams":
        # uniform in [-1/sqrt(n*d_in), 1/sqrt(n*d_in)], zero bias
        s = 1.0 / np.sqrt(n * d_in)
        W = rng.uniform(-s, s, size=(d_out, n * d_in))
        return cls(W, np.zeros(d_out))

    def copy(self) -> "FusionParams":
        return FusionParams(self.W.copy(), self.b.copy())


def _stack_input(params: FusionParams, frames: Sequence[np.ndarray]) -> np.ndarray:
    x = np.concatenate([np.asarray(f, dtype=np.float64) for f in frames])
    if x.shape[0] != params.in_dim:
        raise ValueError(
            f"stacked input has dimension {x.shape[0]}, weights expect {params.in_dim}"
        )
    return x


def compose_fusion(params: FusionParams, frames: Sequence[np.ndarray],
                   normalize: bool = False) -> np.ndarray:
    """y = W @ concat(frames) + b, optionally L2-normalized (off by default)."""
    x = _stack_input(params, frames)
    y = params.W @ x + params.b
    if normalize:
        y = y / np.linalg.norm(y)
    return y


@dataclass
class FusionGrads:
    W: np.ndarray
    b: np.ndarray


def grad_fusion(params: FusionParams, frames: Sequence[np.ndarray],
                upstream: np.ndarray, normalize: bool = False
                ) -> tuple[FusionGrads, np.ndarray]:
    """Gradients of the fusion map w.r.t. parameters and the stacked input.

    Returns (parameter grads, input grads of shape (n*d_in,)).
    """
    x = _stack_input(params, frames)
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != (params.d_out,):
        raise ValueError(f"upstream gradient has shape {g.shape}, expected ({params.d_out},)")
    if normalize:
        y = params.W @ x + params.b
        norm = np.linalg.norm(y)
        z = y / norm
        g = (g - z * np.dot(z, g)) / norm
    dW = np.outer(g, x)
    db = g.copy()
    dx = params.W.T @ g
    return FusionGrads(dW, db), dx


# ---------------------------------------------------------------------------
# recurrent


_GATES = ("i", "f", "o", "g")


@dataclass
class LstmParams:
    """Single LSTM cell: input weights W_*, recurrent weights U_*, biases b_*."""

    w_i: np.ndarray
    w_f: np.ndarray
    w_o: np.ndarray
    w_g: np.ndarray
    u_i: np.ndarray
    u_f: np.ndarray
    u_o: np.ndarray
    u_g: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_g: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            arr = np.asarray(getattr(self, f.name), dtype=np.float64)
            setattr(self, f.name, arr)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {f.name}")
        h, d_in = self.w_i.shape
        for name in ("w_f", "w_o", "w_g"):
            if getattr(self, name).shape != (h, d_in):
                raise ValueError(f"{name} shape {getattr(self, name).shape} != ({h}, {d_in})")
        for name in ("u_i", "u_f", "u_o", "u_g"):
            if getattr(self, name).shape != (h, h):
                raise ValueError(f"{name} shape {getattr(self, name).shape} != ({h}, {h})")
        for name in ("b_i", "b_f", "b_o", "b_g"):
            if getattr(self, name).shape != (h,):
                raise ValueError(f"{name} shape {getattr(self, name).shape} != ({h},)")

    @property
    def hidden_size(self) -> int:
        return self.w_i.shape[0]

    @property
    def d_in(self) -> int:
        return self.w_i.shape[1]

    @classmethod
    def init(cls, d_in: int, h: int, rng: np.random.Generator) -> "LstmParams":
        # uniform in [-1/sqrt(h), 1/sqrt(h)]; forget-gate bias starts at 1
        s = 1.0 / np.sqrt(h)
        def u(shape):
            return rng.uniform(-s, s, size=shape)
        return cls(
            w_i=u((h, d_in)), w_f=u((h, d_in)), w_o=u((h, d_in)), w_g=u((h, d_in)),
            u_i=u((h, h)), u_f=u((h, h)), u_o=u((h, h)), u_g=u((h, h)),
            b_i=u(h), b_f=np.ones(h), b_o=u(h), b_g=u(h),
        )

    def copy(self) -> "LstmParams":
        return LstmParams(**{f.name: getattr(self, f.name).copy() for f in fields(self)})


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zero(cls, hidden_size: int) -> "LstmState":
        return cls(np.zeros(hidden_size), np.zeros(hidden_size))


@dataclass
class _StepCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


def _lstm_step(params: LstmParams, state: LstmState, x: np.ndarray) -> tuple[LstmState, _StepCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.d_in,):
        raise ValueError(f"frame has shape {x.shape}, cell expects ({params.d_in},)")
    h_prev, c_prev = state.h, state.c
    i = sigmoid(params.w_i @ x + params.u_i @ h_prev + params.b_i)
    f = sigmoid(params.w_f @ x + params.u_f @ h_prev + params.b_f)
    o = sigmoid(params.w_o @ x + params.u_o @ h_prev + params.b_o)
    g = np.tanh(params.w_g @ x + params.u_g @ h_prev + params.b_g)
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    cache = _StepCache(x, h_prev, c_prev, i, f, o, g, c, tanh_c)
    return LstmState(h, c), cache


def step_recurrent(params: LstmParams, state: LstmState, frame: np.ndarray) -> LstmState:
    """One cell application; the running descriptor is state.h."""
    new_state, _ = _lstm_step(params, state, frame)
    return new_state


def compose_recurrent(params: LstmParams, frames: Sequence[np.ndarray]
                      ) -> tuple[np.ndarray, LstmState]:
    """Feed the frames through the cell from a zero state.

    Returns (descriptor, final state) with descriptor = final hidden state;
    identical to chaining step_recurrent over the frames.
    """
    if len(frames) == 0:
        raise ValueError("cannot compose an empty sequence")
    state = LstmState.zero(params.hidden_size)
    for x in frames:
        state = step_recurrent(params, state, x)
    return state.h, state


def _lstm_forward_batch(params: LstmParams, X: np.ndarray
                        ) -> tuple[np.ndarray, list[_StepCache]]:
    """Cell applied to a (B, T, d_in) batch; returns (final h (B, h), caches)."""
    X = np.asarray(X, dtype=np.float64)
    B = X.shape[0]
    h = np.zeros((B, params.hidden_size))
    c = np.zeros((B, params.hidden_size))
    caches = []
    for t in range(X.shape[1]):
        x = X[:, t, :]
        i = sigmoid(x @ params.w_i.T + h @ params.u_i.T + params.b_i)
        f = sigmoid(x @ params.w_f.T + h @ params.u_f.T + params.b_f)
        o = sigmoid(x @ params.w_o.T + h @ params.u_o.T + params.b_o)
        g = np.tanh(x @ params.w_g.T + h @ params.u_g.T + params.b_g)
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        caches.append(_StepCache(x, h, c, i, f, o, g, c_new, tanh_c))
        h = o * tanh_c
        c = c_new
    return h, caches


def _lstm_backward_batch(params: LstmParams, caches: list[_StepCache],
                         upstream: np.ndarray) -> tuple["LstmGrads", np.ndarray]:
    """BPTT over a cached batched forward pass.

    Parameter gradients come back summed over the batch; input gradients
    per sample, shape (B, T, d_in).
    """
    B = upstream.shape[0]
    T = len(caches)
    grads = LstmGrads.zero(params)
    dX = np.zeros((B, T, params.d_in))
    dh = np.asarray(upstream, dtype=np.float64).copy()
    dc = np.zeros((B, params.hidden_size))
    for t in range(T - 1, -1, -1):
        k = caches[t]
        dc_total = dc + dh * k.o * (1.0 - k.tanh_c ** 2)
        d_pre = {
            "o": dh * k.tanh_c * k.o * (1.0 - k.o),
            "f": dc_total * k.c_prev * k.f * (1.0 - k.f),
            "i": dc_total * k.g * k.i * (1.0 - k.i),
            "g": dc_total * k.i * (1.0 - k.g ** 2),
        }
        dx = np.zeros((B, params.d_in))
        dh_prev = np.zeros((B, params.hidden_size))
        for gate in _GATES:
            d = d_pre[gate]
            getattr(grads, f"w_{gate}")[...] += d.T @ k.x
            getattr(grads, f"u_{gate}")[...] += d.T @ k.h_prev
            getattr(grads, f"b_{gate}")[...] += d.sum(axis=0)
            dx += d @ getattr(params, f"w_{gate}")
            dh_prev += d @ getattr(params, f"u_{gate}")
        dX[:, t, :] = dx
        dh = dh_prev
        dc = dc_total * k.f
    return grads, dX


@dataclass
class LstmGrads:
    w_i: np.ndarray
    w_f: np.ndarray
    w_o: np.ndarray
    w_g: np.ndarray
    u_i: np.ndarray
    u_f: np.ndarray
    u_o: np.ndarray
    u_g: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_g: np.ndarray

    @classmethod
    def zero(cls, params: LstmParams) -> "LstmGrads":
        return cls(**{f.name: np.zeros_like(getattr(params, f.name)) for f in fields(params)})


def grad_recurrent(params: LstmParams, frames: Sequence[np.ndarray],
                   upstream: np.ndarray) -> tuple[LstmGrads, np.ndarray]:
    """Backprop through time for d(upstream . h_n)/d(params, inputs).

    Returns (parameter grads, input grads stacked as (n, d_in)).
    """
    if len(frames) == 0:
        raise ValueError("cannot differentiate an empty sequence")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (params.hidden_size,):
        raise ValueError(
            f"upstream gradient has shape {upstream.shape}, expected ({params.hidden_size},)"
        )
    X = np.stack([np.asarray(x, dtype=np.float64) for x in frames])[None, :, :]
    if X.shape[2] != params.d_in:
        raise ValueError(f"frames have dimension {X.shape[2]}, cell expects {params.d_in}")
    _, caches = _lstm_forward_batch(params, X)
    grads, dX = _lstm_backward_batch(params, caches, upstream[None, :])
    return grads, dX[0]


def batch_recurrent(params: LstmParams, windows: np.ndarray) -> np.ndarray:
    """Vectorized compose_recurrent over a batch of windows (N, n, d_in)."""
    h, _ = _lstm_forward_batch(params, np.asarray(windows, dtype=np.float64))
    return h


# ---------------------------------------------------------------------------
# checkpoint container: magic "SPW1", kind tag u8, shape header, f32 arrays


def save_params(path: str, kind: str, params: FusionParams | LstmParams) -> None:
    tag = KIND_TAGS[kind]
    out = bytearray(SPW_MAGIC)
    out += struct.pack("<B", tag)
    if isinstance(params, FusionParams):
        if tag == KIND_RECURRENT:
            raise ValueError("recurrent checkpoint needs LstmParams")
        out += struct.pack("<II", params.d_out, params.in_dim)
        out += params.W.astype("<f4").tobytes()
        out += params.b.astype("<f4").tobytes()
    elif isinstance(params, LstmParams):
        if tag != KIND_RECURRENT:
            raise ValueError(f"{kind} checkpoint needs FusionParams")
        out += struct.pack("<II", params.hidden_size, params.d_in)
        for f in fields(params):
            out += getattr(params, f.name).astype("<f4").tobytes()
    else:
        raise TypeError(f"cannot serialize {type(params).__name__}")
    atomic_write_bytes(path, bytes(out))


def load_params(path: str) -> tuple[str, FusionParams | LstmParams]:
    """Returns (composer kind, params). Round-trips save_params exactly."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 5 or raw[:4] != SPW_MAGIC:
        raise ValueError(f"{path}: not a parameter checkpoint (bad magic)")
    tag = raw[4]
    if tag not in KIND_NAMES:
        raise ValueError(f"{path}: unknown composer kind tag {tag}")
    a, b = struct.unpack_from("<II", raw, 5)
    body = np.frombuffer(raw, dtype="<f4", offset=13).astype(np.float64)
    if tag in (KIND_GROUPING_HEAD, KIND_FUSION):
        d_out, in_dim = a, b
        need = d_out * in_dim + d_out
        if body.size != need:
            raise ValueError(f"{path}: expected {need} floats, found {body.size}")
        W = body[:d_out * in_dim].reshape(d_out, in_dim)
        return KIND_NAMES[tag], FusionParams(W, body[d_out * in_dim:])
    h, d_in = a, b
    sizes = [h * d_in] * 4 + [h * h] * 4 + [h] * 4
    if body.size != sum(sizes):
        raise ValueError(f"{path}: expected {sum(sizes)} floats, found {body.size}")
    arrays = []
    off = 0
    for s in sizes:
        arrays.append(body[off:off + s])
        off += s
    names = [f.name for f in fields(LstmParams)]
    kwargs = {}
    for name, arr in zip(names, arrays):
        if name.startswith("w_"):
            kwargs[name] = arr.reshape(h, d_in)
        elif name.startswith("u_"):
            kwargs[name] = arr.reshape(h, h)
        else:
            kwargs[name] = arr
    return KIND_NAMES[tag], LstmParams(**kwargs)


# ---------------------------------------------------------------------------
# descriptor pipelines: composer kind + params applied to raw frame windows


class Pipeline:
    """Maps an (n, d_in) window of backbone features to one descriptor."""

    kind: str
    n: int

    @property
    def output_dim(self) -> int:
        raise NotImplementedError

    def describe(self, window: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def describe_batch(self, windows: np.ndarray) -> np.ndarray:
        return np.stack([self.describe(w) for w in windows])


class SingleViewPipeline(Pipeline):
    """Raw per-frame features, one frame per query (the untrained baseline)."""

    kind = "single"
    n = 1

    def __init__(self, d_in: int):
        self.d_in = d_in

    @property
    def output_dim(self) -> int:
        return self.d_in

    def describe(self, window: np.ndarray) -> np.ndarray:
        window = np.asarray(window, dtype=np.float64)
        if window.shape != (1, self.d_in):
            raise ValueError(f"expected (1, {self.d_in}) window, got {window.shape}")
        return window[0]

    def describe_batch(self, windows: np.ndarray) -> np.ndarray:
        return np.asarray(windows, dtype=np.float64)[:, 0, :]


class GroupingPipeline(Pipeline):
    """Per-frame head (if trained) followed by concatenation."""

    kind = "grouping"

    def __init__(self, n: int, d_in: int, head: FusionParams | None = None):
        if head is not None and head.in_dim != d_in:
            raise ValueError(f"head expects input {head.in_dim}, features have {d_in}")
        self.n = n
        self.d_in = d_in
        self.head = head

    @property
    def output_dim(self) -> int:
        per_frame = self.d_in if self.head is None else self.head.d_out
        return self.n * per_frame

    def describe(self, window: np.ndarray) -> np.ndarray:
        window = np.asarray(window, dtype=np.float64)
        if self.head is None:
            return compose_grouping(list(window))
        return compose_grouping([compose_fusion(self.head, [x]) for x in window])

    def describe_batch(self, windows: np.ndarray) -> np.ndarray:
        w = np.asarray(windows, dtype=np.float64)
        N, n, d = w.shape
        if self.head is not None:
            w = w.reshape(N * n, d) @ self.head.W.T + self.head.b
            return w.reshape(N, -1)
        return w.reshape(N, n * d)


class FusionPipeline(Pipeline):
    kind = "fusion"

    def __init__(self, params: FusionParams, n: int, normalize: bool = False):
        if params.in_dim % n != 0:
            raise ValueError(f"weight width {params.in_dim} not divisible by n={n}")
        self.params = params
        self.n = n
        self.normalize = normalize

    @property
    def output_dim(self) -> int:
        return self.params.d_out

    def describe(self, window: np.ndarray) -> np.ndarray:
        return compose_fusion(self.params, list(np.asarray(window, dtype=np.float64)),
                              normalize=self.normalize)

    def describe_batch(self, windows: np.ndarray) -> np.ndarray:
        w = np.asarray(windows, dtype=np.float64)
        N = w.shape[0]
        y = w.reshape(N, -1) @ self.params.W.T + self.params.b
        if self.normalize:
            y = y / np.linalg.norm(y, axis=1, keepdims=True)
        return y


class RecurrentPipeline(Pipeline):
    kind = "recurrent"

    def __init__(self, params: LstmParams, n: int):
        self.params = params
        self.n = n

    @property
    def output_dim(self) -> int:
        return self.params.hidden_size

    def describe(self, window: np.ndarray) -> np.ndarray:
        desc, _ = compose_recurrent(self.params, list(np.asarray(window, dtype=np.float64)))
        return desc

    def describe_batch(self, windows: np.ndarray) -> np.ndarray:
        return batch_recurrent(self.params, windows)


def make_pipeline(kind: str, n: int, d_in: int,
                  params: FusionParams | LstmParams | None = None) -> Pipeline:
    """Wire a composer kind + optional trained params into a pipeline."""
    if kind == "single":
        return SingleViewPipeline(d_in)
    if kind == "grouping":
        if params is not None and not isinstance(params, FusionParams):
            raise TypeError("grouping expects an affine head checkpoint")
        return GroupingPipeline(n, d_in, head=params)
    if kind == "fusion":
        if not isinstance(params, FusionParams):
            raise TypeError("fusion requires trained FusionParams")
        return FusionPipeline(params, n)
    if kind == "recurrent":
        if not isinstance(params, LstmParams):
            raise TypeError("recurrent requires trained LstmParams")
        return RecurrentPipeline(params, n)
    raise ValueError(f"unknown composer kind {kind!r}")
