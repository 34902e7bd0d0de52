#!/usr/bin/env python3
"""
Write the synthetic desk-scale suite: 128x128 self-similar PNGs with ramp depth maps

Usage:
    python scripts/make_synthetic_suite.py OUTPUT_DIR [SIZE]
"""
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from rzsr.utils.helpers import ensure_dir  # noqa: E402
from rzsr.utils.image_io import write_depth_dpt, write_image  # noqa: E402
from rzsr.utils.synthetic import PATTERNS, ramp_depth  # noqa: E402


def main() -> int:
    if len(sys.argv) < 2:
        print(__doc__)
        return 1
    out = ensure_dir(sys.argv[1])
    size = int(sys.argv[2]) if len(sys.argv) > 2 else 128
    for name, make in PATTERNS.items():
        img = make(size)
        write_image(out / f"{name}.png", img)
        write_depth_dpt(out / f"{name}.dpt", ramp_depth(size, size))
        print(f"wrote {name}.png / {name}.dpt")
    print(f"{len(PATTERNS)} images in {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
