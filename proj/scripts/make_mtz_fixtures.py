#!/usr/bin/env python3
"""Writes small MTZ fixtures into tests/data with an independent writer:
three_le.mtz / three_be.mtz (3 reflections, FreeR_flag 0,1,1) and
missing_le.mtz (4 rows, one F missing as NaN, one flagged by VALM)."""
import math
import os
import struct
import sys

def record(text):
    return text.ljust(80).encode("ascii")

def mtz(rows, labels, types, big_endian, valm=None):
    e = ">" if big_endian else "<"
    ncol, nref = len(labels), len(rows)
    out = bytearray(b"MTZ ")
    out += struct.pack(e + "i", 21 + ncol * nref)
    out += bytes([0x11, 0x11, 0, 0]) if big_endian else bytes([0x44, 0x41, 0, 0])
    out += bytes(80 - len(out))
    for r in rows:
        for v in r:
            out += struct.pack(e + "f", v)
    hdr = [
        "VERS MTZ:V1.1",
        "TITLE fixture",
        f"NCOL {ncol:8d} {nref:12d} {0:8d}",
        "CELL   30.0000   40.0000   50.0000   90.0000   90.0000   90.0000",
        "SYMINF   4  4 P   19                 'P 21 21 21' PG222",
        "SYMM X,  Y,  Z",
        "SYMM -X+1/2,  -Y,  Z+1/2",
        "SYMM -X,  Y+1/2,  -Z+1/2",
        "SYMM X+1/2,  -Y+1/2,  -Z",
        "VALM NAN" if valm is None else f"VALM {valm}",
    ]
    for lab, ty in zip(labels, types):
        hdr.append(f"COLUMN {lab:<30s} {ty} {0:17.4f} {1:17.4f}    1")
    hdr += ["END"]
    for h in hdr:
        out += record(h)
    out += record("MTZENDOFHEADERS")
    return bytes(out)

def main(d):
    labels = ["H", "K", "L", "FP", "SIGFP", "FreeR_flag"]
    types = ["H", "H", "H", "F", "Q", "I"]
    rows = [(1, 0, 0, 12.5, 0.25, 0), (0, 2, 1, 7.75, 0.5, 1), (3, 1, 2, 3.0, 0.125, 1)]
    with open(os.path.join(d, "three_le.mtz"), "wb") as f:
        f.write(mtz(rows, labels, types, False))
    with open(os.path.join(d, "three_be.mtz"), "wb") as f:
        f.write(mtz(rows, labels, types, True))
    rows4 = rows + [(2, 2, 2, -999.0, 1.0, 1)]
    rows4[1] = (0, 2, 1, math.nan, 0.5, 1)
    with open(os.path.join(d, "missing_le.mtz"), "wb") as f:
        f.write(mtz(rows4, labels, types, False, valm=-999))

if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data")
