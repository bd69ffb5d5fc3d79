#!/usr/bin/env python3
"""Write data/iris.csv in the classic UCI row format.

The values come from scikit-learn's bundled copy of the Fisher/Anderson
iris measurements, which matches the UCI file after its two documented
erratum rows are ignored; rows are written as four measurements plus the
species label. Run from the repository root:

    python3 scripts/export_iris.py
"""

import pathlib

from sklearn.datasets import load_iris


def main():
    iris = load_iris()
    names = [f"Iris-{n}" for n in iris.target_names]
    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "iris.csv"
    out.parent.mkdir(exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for row, label in zip(iris.data, iris.target):
            cells = [f"{v:.1f}" for v in row]
            cells.append(names[label])
            fh.write(",".join(cells) + "\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
