"""Binary checkpoint format.

All integers and floats are little-endian::

    magic        8 bytes  b"XBARCKPT"
    version      u16      (1)
    iteration    u64
    n_classes    u32
    input_shape  u8 ndim, ndim x u32
    n_layers     u32
    per layer:
        name, kind           u16 length + UTF-8 bytes each
        input/output shape   u8 ndim, ndim x u32 each
        kernel               u8 present, 3 x u32 (height, width, stride)
        flags                u8 bit0 weight, bit1 bias, bit2 factors
        weight               matrix
        bias                 u32 length, float32 values
        factors              u32 rank, matrix U, matrix V
        masks                u8 count, then per mask:
                             u8 key (ASCII W/U/V), u32 rows, u32 cols, u32 P, u32 Q,
                             ceil(rows*cols/8) bytes of row-major bits (LSB first),
                             u32 count + u32 ids of deleted row groups,
                             u32 count + u32 ids of deleted column groups
    rng state    u8 present (always 0 in version 1)

A matrix is u32 rows, u32 cols and rows*cols float32 values in row-major
order. Saving rounds float64 weights to float32, so a loaded network
re-saves to identical bytes.
"""

import struct

import numpy as np

from . import fabric
from .exceptions import FormatError, UsageError
from .lra import LowRankPair
from .nn.network import KINDS, Layer, Network
from .scissor import DeletionMask

MAGIC = b"XBARCKPT"
VERSION = 1


class _Writer:
    def __init__(self):
        self.parts = []

    def pack(self, fmt, *values):
        self.parts.append(struct.pack("<" + fmt, *values))

    def text(self, s):
        b = s.encode("utf-8")
        self.pack("H", len(b))
        self.parts.append(b)

    def shape(self, shape):
        self.pack("B", len(shape))
        self.pack(f"{len(shape)}I", *shape)

    def matrix(self, A):
        A = np.asarray(A)
        self.pack("II", *A.shape)
        self.parts.append(np.ascontiguousarray(A, dtype="<f4").tobytes())

    def ids(self, ids):
        ids = np.asarray([] if ids is None else ids, dtype="<u4")
        self.pack("I", len(ids))
        self.parts.append(ids.tobytes())

    def bytes(self):
        return b"".join(self.parts)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def unpack(self, fmt):
        fmt = "<" + fmt
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise FormatError("truncated checkpoint", offset=self.pos)
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out

    def raw(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError("truncated checkpoint", offset=self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def text(self):
        (n,) = self.unpack("H")
        try:
            return self.raw(n).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("invalid UTF-8 string", offset=self.pos - n) from None

    def shape(self):
        (n,) = self.unpack("B")
        return tuple(self.unpack(f"{n}I"))

    def matrix(self):
        rows, cols = self.unpack("II")
        data = self.raw(4 * rows * cols)
        return np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(rows, cols)

    def ids(self):
        (n,) = self.unpack("I")
        return np.frombuffer(self.raw(4 * n), dtype="<u4").astype(np.int64)


def dumps(net):
    w = _Writer()
    w.parts.append(MAGIC)
    w.pack("HQI", VERSION, net.iteration, net.n_classes)
    w.shape(net.input_shape)
    w.pack("I", len(net.layers))
    for layer in net.layers:
        w.text(layer.name)
        w.text(layer.kind)
        w.shape(layer.input_shape)
        w.shape(layer.output_shape)
        if layer.kernel is None:
            w.pack("B", 0)
        else:
            w.pack("B3I", 1, *layer.kernel)
        flags = (layer.weight is not None) | (layer.bias is not None) << 1 | (layer.factors is not None) << 2
        w.pack("B", flags)
        if layer.weight is not None:
            w.matrix(layer.weight)
        if layer.bias is not None:
            w.pack("I", len(layer.bias))
            w.parts.append(np.asarray(layer.bias, dtype="<f4").tobytes())
        if layer.factors is not None:
            w.pack("I", layer.factors.rank)
            w.matrix(layer.factors.U)
            w.matrix(layer.factors.V)
        w.pack("B", len(layer.masks))
        for key in sorted(layer.masks):
            m = layer.masks[key]
            rows, cols = m.deleted.shape
            t = m.tiling or fabric.CrossbarTiling(rows, cols, rows, cols)
            w.pack("cIIII", key.encode("ascii"), rows, cols, t.P, t.Q)
            w.parts.append(np.packbits(m.deleted.ravel(), bitorder="little").tobytes())
            w.ids(m.row_groups)
            w.ids(m.col_groups)
    w.pack("B", 0)
    return w.bytes()


def loads(buf):
    if buf[:len(MAGIC)] != MAGIC:
        raise FormatError("not a checkpoint: bad magic", offset=0)
    r = _Reader(buf)
    r.pos = len(MAGIC)
    version, iteration, n_classes = r.unpack("HQI")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=len(MAGIC))
    input_shape = r.shape()
    (n_layers,) = r.unpack("I")
    layers = []
    for _ in range(n_layers):
        name = r.text()
        start = r.pos
        kind = r.text()
        if kind not in KINDS:
            raise FormatError(f"unknown layer kind {kind!r}", offset=start)
        in_shape, out_shape = r.shape(), r.shape()
        (has_kernel,) = r.unpack("B")
        kernel = tuple(r.unpack("3I")) if has_kernel else None
        (flags,) = r.unpack("B")
        layer = Layer(name, kind, in_shape, out_shape, kernel=kernel)
        if flags & 1:
            layer.weight = r.matrix()
        if flags & 2:
            (n,) = r.unpack("I")
            layer.bias = np.frombuffer(r.raw(4 * n), dtype="<f4").astype(np.float64)
        if flags & 4:
            (rank,) = r.unpack("I")
            U, V = r.matrix(), r.matrix()
            if U.shape[1] != rank or V.shape[1] != rank:
                raise FormatError(f"{name}: factor rank mismatch", offset=r.pos)
            layer.factors = LowRankPair(U, V)
        (n_masks,) = r.unpack("B")
        for _ in range(n_masks):
            key, rows, cols, P, Q = r.unpack("cIIII")
            bits = np.frombuffer(r.raw(-(-rows * cols // 8)), dtype=np.uint8)
            deleted = np.unpackbits(bits, count=rows * cols, bitorder="little").astype(bool).reshape(rows, cols)
            mask = DeletionMask(deleted, fabric.CrossbarTiling(rows, cols, P, Q), r.ids(), r.ids())
            layer.masks[key.decode("ascii")] = mask
        layers.append(layer)
    (has_rng,) = r.unpack("B")
    if has_rng:
        raise FormatError("RNG state records are not supported in version 1", offset=r.pos - 1)
    if r.pos != len(buf):
        raise FormatError("trailing bytes after checkpoint", offset=r.pos)
    try:
        net = Network(layers, input_shape, n_classes)
    except UsageError as exc:
        raise FormatError(f"inconsistent network: {exc}") from None
    net.iteration = iteration
    return net


def save(net, path):
    data = dumps(net)
    with open(path, "wb") as fh:
        fh.write(data)
    return path


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
