#!/usr/bin/env python3
"""Writes the committed tensor/archive fixtures with an independent encoder.

Run from this directory. Values are chosen to be exactly representable in
float32 so the C++ tests can restate them by formula.
"""
import struct

import numpy as np


def tensor_bytes(shape, values, magic=b"LASF", version=1, dtype=0):
    head = magic + struct.pack("<HBB", version, dtype, len(shape))
    head += b"".join(struct.pack("<I", d) for d in shape)
    return head + np.asarray(values, dtype="<f4").tobytes()


def archive_bytes(entries, magic=b"LASW", version=1):
    out = magic + struct.pack("<HI", version, len(entries))
    for name, shape, values in entries:
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw + tensor_bytes(shape, values)
    return out


def ramp(n, scale=0.25, offset=-1.0):
    return [offset + scale * i for i in range(n)]


def write(name, data):
    with open(name, "wb") as f:
        f.write(data)


one = tensor_bytes((1, 1, 1, 1), [1.0])
ramp_t = tensor_bytes((1, 2, 3, 4), ramp(24))
rng = np.random.default_rng(1234)
random_t = tensor_bytes((2, 3, 4, 5), rng.standard_normal(120).astype(np.float32))

entries = [
    ("conv.weight", (2, 1, 3, 3), ramp(18, 0.125, -1.0)),
    ("conv.bias", (1, 2, 1, 1), [0.5, -0.5]),
    ("bn.running_var", (1, 2, 1, 1), [1.0, 2.0]),
    ("modality.α", (1, 2, 1, 1), [1.0, 1.0]),
]

write("one.lasf", one)
write("ramp.lasf", ramp_t)
write("random.lasf", random_t)
write("small.lasw", archive_bytes(entries))

write("bad_magic.lasf", b"XXXX" + one[4:])
write("truncated.lasf", ramp_t[:-6])
write("bad_version.lasf", tensor_bytes((1, 1, 1, 1), [1.0], version=2))
write("bad_dtype.lasf", tensor_bytes((1, 1, 1, 1), [1.0], dtype=1))
write("bad_magic.lasw", b"LASF" + archive_bytes(entries)[4:])
write("truncated.lasw", archive_bytes(entries)[:-3])
write("duplicate.lasw", archive_bytes([entries[0], entries[1], entries[0]]))
