#!/usr/bin/env python3
"""Generate synthetic cubes plus a dataset manifest for toy experiments.

The cubes are smooth low-frequency spectral mixtures in [0, 1]; the manifest
references them by relative name, so the output directory is relocatable.
"""

import argparse
import json
import os

from hcanet.data import DatasetManifest, save_cube, synthetic_cube


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--cubes", type=int, default=2)
    ap.add_argument("--height", type=int, default=64)
    ap.add_argument("--width", type=int, default=64)
    ap.add_argument("--bands", type=int, default=8)
    ap.add_argument("--patch", type=int, default=32, help="spatial patch extent")
    ap.add_argument("--samples", type=int, default=200)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--val-fraction", type=float, default=0.05)
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    names = []
    for i in range(args.cubes):
        name = f"cube{i:03d}.hsic"
        cube = synthetic_cube(args.height, args.width, args.bands, seed=args.seed + i)
        save_cube(cube, os.path.join(args.out, name))
        names.append(name)
    manifest = DatasetManifest(
        cubes=tuple(names),
        patch_size=(args.patch, args.patch, args.bands),
        scales=(1.0,),
        rotations=("identity", "rot90", "rot180", "rot270"),
        samples=args.samples,
        seed=args.seed,
        val_fraction=args.val_fraction,
    )
    path = os.path.join(args.out, "manifest.json")
    manifest.save(path)
    print(json.dumps({"cubes": len(names), "manifest": path, "samples": args.samples}, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
