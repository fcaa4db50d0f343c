"""Writes the 8x8 handwritten-digit corpus as `label,f_1,...,f_64` rows.

Pixel values are the raw 0..16 intensities; the loader rescales them.
"""
import csv
import sys

from sklearn.datasets import load_digits


def main(path):
    digits = load_digits()
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for x, y in zip(digits.data, digits.target):
            w.writerow([int(y)] + [int(v) for v in x])


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/digits8x8.csv")
