#!/usr/bin/env python3
"""Downloads the deposited 1L63 model and structure factors from the RCSB
and writes data/1l63/1l63.pdb and data/1l63/1l63.refl (xtalforge text
reflection format). The acceptance run uses them when present.

    python3 scripts/fetch_1l63.py [--out data/1l63]
"""
import argparse
import math
import pathlib
import shlex
import sys
import urllib.request

PDB_URL = "https://files.rcsb.org/download/1L63.pdb"
SF_URL = "https://files.rcsb.org/download/1L63-sf.cif"


def fetch(url):
    with urllib.request.urlopen(url, timeout=60) as r:
        return r.read().decode("utf-8", errors="replace")


def refln_loop(text):
    """Column names and rows of the first _refln loop."""
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        if lines[i].strip() == "loop_" and i + 1 < len(lines) and lines[i + 1].startswith("_refln."):
            cols, i = [], i + 1
            while i < len(lines) and lines[i].startswith("_refln."):
                cols.append(lines[i].split()[0][len("_refln."):])
                i += 1
            rows = []
            while i < len(lines):
                s = lines[i].strip()
                if not s or s.startswith(("loop_", "_", "#", "data_")):
                    break
                rows.append(shlex.split(s))
                i += 1
            return cols, rows
        i += 1
    raise SystemExit("no _refln loop in the structure-factor file")


def cell_and_group(pdb):
    for line in pdb.splitlines():
        if line.startswith("CRYST1"):
            cell = [float(line[6:15]), float(line[15:24]), float(line[24:33]),
                    float(line[33:40]), float(line[40:47]), float(line[47:54])]
            return cell, line[55:66].strip()
    raise SystemExit("no CRYST1 record in the model")


def convert(pdb, sf):
    cell, group = cell_and_group(pdb)
    cols, rows = refln_loop(sf)
    col = {c: k for k, c in enumerate(cols)}
    for need in ("index_h", "index_k", "index_l"):
        if need not in col:
            raise SystemExit(f"_refln.{need} missing")
    use_i = "F_meas_au" not in col
    f_col = "intensity_meas" if use_i else "F_meas_au"
    s_col = "intensity_sigma" if use_i else "F_meas_sigma_au"
    if f_col not in col:
        raise SystemExit("neither F_meas_au nor intensity_meas present")
    out = ["#xtalforge-refl v1",
           "#cell " + " ".join(f"{v:g}" for v in cell),
           f"#spacegroup {group}"]
    kept = dropped = 0
    for r in rows:
        f, s = r[col[f_col]], r[col[s_col]] if s_col in col else "?"
        status = r[col["status"]] if "status" in col else "o"
        if f in ("?", ".") or status not in ("o", "f"):
            dropped += 1
            continue
        f, s = float(f), float(s) if s not in ("?", ".") else 0.0
        if use_i:  # French-Wilson is out of scope; plain square root
            if f <= 0:
                dropped += 1
                continue
            f, s = math.sqrt(f), 0.5 * s / math.sqrt(f)
        h, k, l = (int(r[col[c]]) for c in ("index_h", "index_k", "index_l"))
        out.append(f"{h} {k} {l} {f:.6g} {s:.6g} {1 if status == 'f' else 0}")
        kept += 1
    print(f"{kept} reflections kept, {dropped} dropped", file=sys.stderr)
    return "\n".join(out) + "\n"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data" / "1l63"))
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    pdb, sf = fetch(PDB_URL), fetch(SF_URL)
    out.mkdir(parents=True, exist_ok=True)
    (out / "1l63.pdb").write_text(pdb)
    (out / "1l63.refl").write_text(convert(pdb, sf))
    print(f"wrote {out}/1l63.pdb and {out}/1l63.refl", file=sys.stderr)


if __name__ == "__main__":
    main()
