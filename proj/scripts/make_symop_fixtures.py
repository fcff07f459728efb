#!/usr/bin/env python3
"""Writes tests/data/symop_fixtures.txt: operator triplets with their
rotation matrix and translation, evaluated with sympy on the basis points."""
import sys
from fractions import Fraction
import sympy

TRIPLETS = [
    "x,y,z", "-x,-y,-z", "-x,y,-z", "-x,y+1/2,-z", "x+1/2,-y+1/2,-z",
    "-x+1/2,-y,z+1/2", "-x,y+1/2,-z+1/2", "x+1/2,y+1/2,z", "-x+1/2,y+1/2,-z",
    "-y,x-y,z+1/3", "-x+y,-x,z+2/3", "y,x,-z", "x-y,-y,-z+2/3", "-x,-x+y,-z+1/3",
    "-y+1/2,x+1/2,z+3/4", "y+1/2,-x+1/2,z+1/4", "-x+1/2,y+1/2,-z+1/4",
    "x+1/2,-y+1/2,-z+3/4", "y,x,-z+1/2", "-y,-x,-z", "z,x,y", "y,z,x",
    "-z,-x,-y", "x,y,-z+1/2", "-x+1/4,-y+1/4,z", "x+3/4,y+1/4,-z+1/2",
    "X, Y, Z+1/6", "-Y+X, X, Z+5/6", "2/3+x,1/3+y,1/3+z", "-x+y,y,1/2+z",
]

def evaluate(triplet):
    x, y, z = sympy.symbols("x y z")
    exprs = [sympy.sympify(t.strip().lower()) for t in triplet.split(",")]
    rot, tran = [], []
    for e in exprs:
        t0 = Fraction(str(sympy.nsimplify(e.subs({x: 0, y: 0, z: 0}))))
        row = []
        for v in (x, y, z):
            basis = {x: 0, y: 0, z: 0}
            basis[v] = 1
            row.append(int(e.subs(basis) - e.subs({x: 0, y: 0, z: 0})))
        rot.append(row)
        tran.append(t0 % 1)
    return rot, tran

def main(path):
    with open(path, "w") as f:
        f.write("# triplet | r11 r12 r13 r21 r22 r23 r31 r32 r33 | t1 t2 t3 (fractions of a cell edge)\n")
        for t in TRIPLETS:
            rot, tran = evaluate(t)
            flat = " ".join(str(v) for row in rot for v in row)
            tr = " ".join(f"{q.numerator}/{q.denominator}" for q in tran)
            f.write(f"{t} | {flat} | {tr}\n")

if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data/symop_fixtures.txt")
