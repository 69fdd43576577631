"""Black-box model endpoints.

A model maps a batch of inputs to a ``(n, arity)`` array of outputs. Inputs
are either full perturbed images (``input_kind == "image"``, shape
``(n, H, W, C)``) or grid-pooled cell values (``input_kind == "mask"``,
shape ``(n, d)``; for an all-ones image and a zero baseline these are the
0/1 mask rows themselves).

Builtin models are verification fixtures with known ground truth. The
subprocess and HTTP adapters speak the NDJSON protocol in ``protocol``.
"""

from __future__ import annotations

import math
import queue
import shlex
import subprocess
import threading
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional
from urllib.parse import parse_qsl

import numpy as np

from . import protocol
from .perturb import cell_means

MASK = "mask"
IMAGE = "image"

DEFAULT_TIMEOUT = 60.0


class TransportError(RuntimeError):
    """A model endpoint failed; no partial results are returned."""

    def __init__(self, message: str, chunk_index: Optional[int] = None):
        if chunk_index is not None:
            message = f"chunk {chunk_index}: {message}"
        super().__init__(message)
        self.chunk_index = chunk_index


# -- builtin models ----------------------------------------------------------


def row_means(batch) -> np.ndarray:
    """Correctly rounded mean of each flattened input (``math.fsum``)."""
    flat = np.asarray(batch, dtype=np.float64).reshape(len(batch), -1)
    return np.array([[math.fsum(row) / len(row)] for row in flat.tolist()])


class Builtin:
    input_kind = MASK
    name = "builtin"

    def __init__(self, **params):
        self.params = params

    def predict(self, batch: np.ndarray, request_id: int = 0) -> np.ndarray:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __repr__(self):
        args = ",".join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.name}({args})"


def _cells(batch, need: int) -> np.ndarray:
    v = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if v.ndim != 2 or v.shape[1] < need:
        raise ValueError(f"expected mask rows with at least {need} cells, got shape {v.shape}")
    return v


class PatchSum(Builtin):
    name = "patch-sum"

    def __init__(self, w):
        super().__init__(w=list(w))
        self.w = np.asarray(w, dtype=np.float64)

    def predict(self, batch, request_id=0):
        v = _cells(batch, self.w.size)
        if v.shape[1] != self.w.size:
            raise ValueError(f"patch-sum has {self.w.size} weights, input has {v.shape[1]} cells")
        return (v * self.w).sum(axis=1)[:, None]


class Xor(Builtin):
    """``|v_i - v_j|``: XOR of the two cells on binary inputs."""

    name = "xor"

    def __init__(self, i: int = 0, j: int = 1):
        super().__init__(i=i, j=j)
        self.i, self.j = int(i), int(j)

    def predict(self, batch, request_id=0):
        v = _cells(batch, max(self.i, self.j) + 1)
        return np.abs(v[:, self.i] - v[:, self.j])[:, None]


class Additive(Builtin):
    """``a * v_i + b * v_j``: two main effects, no interaction."""

    name = "additive"

    def __init__(self, i: int = 0, j: int = 1, a: float = 1.0, b: float = 1.0):
        super().__init__(i=i, j=j, a=a, b=b)
        self.i, self.j, self.a, self.b = int(i), int(j), float(a), float(b)

    def predict(self, batch, request_id=0):
        v = _cells(batch, max(self.i, self.j) + 1)
        return (self.a * v[:, self.i] + self.b * v[:, self.j])[:, None]


class Constant(Builtin):
    name = "constant"

    def __init__(self, c: float = 1.0):
        super().__init__(c=c)
        self.c = float(c)

    def predict(self, batch, request_id=0):
        return np.full((len(batch), 1), self.c)


class PatchImageMean(Builtin):
    """Weighted sum of per-cell mean intensities of the perturbed image."""

    input_kind = IMAGE
    name = "patch-image-mean"

    def __init__(self, w, grid):
        grid = tuple(int(g) for g in grid)
        if len(w) != grid[0] * grid[1]:
            raise ValueError(f"patch-image-mean has {len(w)} weights for grid {grid}")
        super().__init__(w=list(w), grid=f"{grid[0]}x{grid[1]}")
        self.w = np.asarray(w, dtype=np.float64)
        self.grid = grid

    def predict(self, batch, request_id=0):
        return np.array([[(cell_means(img, self.grid) * self.w).sum()] for img in batch])


class Mean(Builtin):
    """Mean of every input value; the in-process twin of the echo server."""

    input_kind = IMAGE
    name = "mean"

    def predict(self, batch, request_id=0):
        return row_means(batch)


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _grid(text: str) -> tuple:
    w, _, h = text.lower().partition("x")
    return int(w), int(h)


_CATALOG: dict[str, tuple[Callable, str]] = {
    "patch-sum": (lambda q: PatchSum(_floats(q["w"])), "linear: sum_i w_i * v_i; ground-truth ranking |w_i|"),
    "xor": (lambda q: Xor(int(q.get("i", 0)), int(q.get("j", 1))), "pure pairwise interaction |v_i - v_j|"),
    "additive": (
        lambda q: Additive(int(q.get("i", 0)), int(q.get("j", 1)), float(q.get("a", 1)), float(q.get("b", 1))),
        "a * v_i + b * v_j, zero interaction",
    ),
    "constant": (lambda q: Constant(float(q.get("c", 1))), "degenerate constant output c"),
    "patch-image-mean": (
        lambda q: PatchImageMean(_floats(q["w"]), _grid(q["grid"])),
        "weighted mean intensity per grid cell of the perturbed image",
    ),
    "mean": (lambda q: Mean(), "mean of all input values"),
}


def builtin_catalog() -> list[dict]:
    return [{"name": name, "description": desc} for name, (_, desc) in _CATALOG.items()]


def make_builtin(name: str, **params) -> Builtin:
    if name not in _CATALOG:
        raise ValueError(f"unknown builtin model {name!r}")
    query = {k: (",".join(str(x) for x in v) if isinstance(v, (list, tuple)) else str(v)) for k, v in params.items()}
    try:
        return _CATALOG[name][0](query)
    except KeyError as exc:
        raise ValueError(f"builtin {name!r} needs parameter {exc}") from None


# -- external adapters -------------------------------------------------------


class _Child:
    """One model process; a reader thread turns stdout into a line queue."""

    def __init__(self, argv: list[str]):
        try:
            self.proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        except OSError as exc:
            raise TransportError(f"cannot start {argv[0]!r}: {exc}") from None
        self.lines: queue.Queue = queue.Queue()
        threading.Thread(target=self._pump, daemon=True).start()

    def _pump(self):
        for line in iter(self.proc.stdout.readline, b""):
            self.lines.put(line)
        self.lines.put(b"")

    def request(self, payload: bytes, timeout: float) -> bytes:
        try:
            self.proc.stdin.write(payload)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(f"model process closed its input: {exc}") from None
        try:
            line = self.lines.get(timeout=timeout)
        except queue.Empty:
            raise TransportError(f"timeout after {timeout} s") from None
        if line == b"":
            code = self.proc.wait()
            raise TransportError(f"model process exited with code {code}")
        return line

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
                self.proc.wait(timeout=2)
            except (OSError, subprocess.TimeoutExpired):
                self.proc.kill()
                self.proc.wait()


class SubprocessModel:
    """Model served by child processes over stdin/stdout, one request in flight per child."""

    def __init__(self, command, input_kind: str = IMAGE, timeout: float = DEFAULT_TIMEOUT):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.argv:
            raise ValueError("empty model command")
        self.input_kind = input_kind
        self.timeout = float(timeout)
        self._idle: queue.LifoQueue = queue.LifoQueue()
        self._lock = threading.Lock()
        self._children: list[_Child] = []

    def _acquire(self) -> _Child:
        try:
            return self._idle.get_nowait()
        except queue.Empty:
            child = _Child(self.argv)
            with self._lock:
                self._children.append(child)
            return child

    def predict(self, batch, request_id: int = 0) -> np.ndarray:
        child = self._acquire()
        try:
            line = child.request(protocol.encode_request(request_id, batch), self.timeout)
            out = protocol.decode_response(line, request_id, len(batch))
        except BaseException:
            # the stream may be out of sync; never reuse this child
            child.proc.kill()
            raise
        self._idle.put(child)
        return out

    def close(self) -> None:
        with self._lock:
            children, self._children = self._children, []
        for child in children:
            child.close()
        self._idle = queue.LifoQueue()

    def __repr__(self):
        return f"cmd:{shlex.join(self.argv)}"


class HttpModel:
    """Model behind an HTTP endpoint accepting the NDJSON request as a POST body."""

    def __init__(self, url: str, input_kind: str = IMAGE, timeout: float = DEFAULT_TIMEOUT):
        self.url = url
        self.input_kind = input_kind
        self.timeout = float(timeout)

    def predict(self, batch, request_id: int = 0) -> np.ndarray:
        req = urllib.request.Request(
            self.url,
            data=protocol.encode_request(request_id, batch),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = resp.read()
        except urllib.error.HTTPError as exc:
            raise TransportError(f"HTTP {exc.code} from {self.url}") from None
        except (urllib.error.URLError, OSError) as exc:
            reason = getattr(exc, "reason", exc)
            if isinstance(reason, TimeoutError) or "timed out" in str(reason):
                raise TransportError(f"timeout after {self.timeout} s") from None
            raise TransportError(f"cannot reach {self.url}: {reason}") from None
        if not body.endswith(b"\n"):
            body += b"\n"
        return protocol.decode_response(body, request_id, len(batch))

    def close(self) -> None:
        pass

    def __repr__(self):
        return self.url


# -- endpoint ----------------------------------------------------------------


@dataclass
class ModelEndpoint:
    model: object
    batch_limit: int = 64
    workers: int = 1
    output_arity: Optional[int] = None

    def __post_init__(self):
        if int(self.batch_limit) < 1 or int(self.workers) < 1:
            raise ValueError("batch_limit and workers must be >= 1")

    @property
    def input_kind(self) -> str:
        return self.model.input_kind

    def close(self) -> None:
        self.model.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _run_chunk(endpoint: ModelEndpoint, inputs, index: int, start: int, stop: int) -> np.ndarray:
    chunk = np.asarray(inputs[start:stop], dtype=np.float64)
    try:
        out = endpoint.model.predict(chunk, request_id=index)
    except TransportError as exc:
        raise TransportError(str(exc), index) from None
    except protocol.ProtocolError as exc:
        raise TransportError(f"malformed response: {exc}", index) from None
    except ValueError as exc:
        raise TransportError(f"model rejected input: {exc}", index) from None
    out = np.asarray(out, dtype=np.float64)
    if out.ndim == 1:
        out = out[:, None]
    if out.ndim != 2 or out.shape[0] != stop - start:
        raise TransportError(f"got output shape {out.shape} for {stop - start} inputs", index)
    if not np.all(np.isfinite(out)):
        raise TransportError("non-finite model output", index)
    return out


def evaluate_batch(endpoint: ModelEndpoint, inputs) -> np.ndarray:
    """Evaluate ``inputs`` (anything with ``len`` and slicing) in order, chunked by ``batch_limit``.

    Chunks are spread over ``endpoint.workers`` threads; the result does not
    depend on the worker count or the chunk size.
    """
    n = len(inputs)
    if n == 0:
        raise ValueError("evaluate_batch needs at least one input")
    bounds = [(k, s, min(n, s + endpoint.batch_limit)) for k, s in enumerate(range(0, n, endpoint.batch_limit))]
    if endpoint.workers == 1 or len(bounds) == 1:
        parts = [_run_chunk(endpoint, inputs, *b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=endpoint.workers) as pool:
            futures = [pool.submit(_run_chunk, endpoint, inputs, *b) for b in bounds]
            errors, parts = [], []
            for fut in futures:
                try:
                    parts.append(fut.result())
                except TransportError as exc:
                    errors.append(exc)
            if errors:
                raise min(errors, key=lambda e: e.chunk_index if e.chunk_index is not None else -1)
    widths = {p.shape[1] for p in parts}
    if len(widths) != 1:
        raise TransportError(f"inconsistent output arity across chunks: {sorted(widths)}")
    arity = widths.pop()
    if endpoint.output_arity is None:
        endpoint.output_arity = arity
    elif endpoint.output_arity != arity:
        raise TransportError(f"output arity changed from {endpoint.output_arity} to {arity}")
    return np.concatenate(parts, axis=0)


def parse_model_spec(
    spec: str,
    grid: Optional[tuple] = None,
    input_kind: str = IMAGE,
    timeout: float = DEFAULT_TIMEOUT,
):
    """Build a model from ``builtin:name?k=v&...``, ``cmd:<command>`` or an http(s) URL."""
    if spec.startswith("builtin:"):
        name, _, query = spec[len("builtin:"):].partition("?")
        params = dict(parse_qsl(query, keep_blank_values=True))
        if name == "patch-image-mean" and "grid" not in params and grid is not None:
            params["grid"] = f"{grid[0]}x{grid[1]}"
        return make_builtin(name, **params)
    if spec.startswith("cmd:"):
        return SubprocessModel(spec[len("cmd:"):], input_kind=input_kind, timeout=timeout)
    if spec.startswith(("http://", "https://")):
        return HttpModel(spec, input_kind=input_kind, timeout=timeout)
    raise ValueError(f"unrecognised model specifier {spec!r}")
