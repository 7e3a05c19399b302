#!/usr/bin/env python3
"""Convert VGG-16 weights to a samst tensor archive for use as the loss backbone.

Input is either a torchvision state dict (.pth, needs torch) or an .npz whose
keys are already in the archive naming scheme (conv1_1.weight, conv1_1.bias,
...). Only the first ten convolutions (through conv4_3) are kept.

    python3 tools/convert_vgg16.py vgg16-397923af.pth weights/vgg16.samst
"""

import argparse
import struct
import sys

import numpy as np

LAYERS = [
    ("conv1_1", 3, 64), ("conv1_2", 64, 64),
    ("conv2_1", 64, 128), ("conv2_2", 128, 128),
    ("conv3_1", 128, 256), ("conv3_2", 256, 256), ("conv3_3", 256, 256),
    ("conv4_1", 256, 512), ("conv4_2", 512, 512), ("conv4_3", 512, 512),
]
# Index of each convolution inside torchvision's vgg16().features.
TORCHVISION_INDEX = [0, 2, 5, 7, 10, 12, 14, 17, 19, 21]

MAGIC = b"SAMST1"
VERSION = 1
DTYPE_F32 = 1


def expected_shapes():
    shapes = {}
    for name, cin, cout in LAYERS:
        shapes[name + ".weight"] = (cout, cin, 3, 3)
        shapes[name + ".bias"] = (cout,)
    return shapes


def load_torch(path):
    try:
        import torch
    except ImportError:
        sys.exit("reading .pth files needs torch; export to .npz instead")
    state = torch.load(path, map_location="cpu")
    if "state_dict" in state:
        state = state["state_dict"]
    out = {}
    for (name, _, _), idx in zip(LAYERS, TORCHVISION_INDEX):
        for part in ("weight", "bias"):
            key = f"features.{idx}.{part}"
            if key not in state:
                sys.exit(f"missing {key} in {path}")
            out[f"{name}.{part}"] = state[key].detach().numpy()
    return out


def load_npz(path):
    with np.load(path) as z:
        return {k: z[k] for k in z.files}


def pack_str(s):
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def write_archive(path, tensors, metadata):
    names = sorted(tensors)
    out = bytearray(MAGIC)
    out += b"L" + struct.pack("<I", VERSION)
    out += struct.pack("<I", len(metadata))
    for k in sorted(metadata):
        out += pack_str(k) + pack_str(metadata[k])
    out += struct.pack("<I", len(names))
    offset = 0
    blobs = []
    for n in names:
        a = np.ascontiguousarray(tensors[n], dtype="<f4")
        blob = a.tobytes()
        out += pack_str(n) + struct.pack("<BI", DTYPE_F32, a.ndim)
        out += b"".join(struct.pack("<Q", d) for d in a.shape)
        out += struct.pack("<QQ", offset, len(blob))
        offset += len(blob)
        blobs.append(blob)
    out += struct.pack("<Q", offset)
    for b in blobs:
        out += b
    with open(path, "wb") as f:
        f.write(out)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("src", help=".pth state dict or .npz")
    p.add_argument("dst", help="output archive")
    args = p.parse_args()

    tensors = load_npz(args.src) if args.src.endswith(".npz") else load_torch(args.src)
    shapes = expected_shapes()
    picked = {}
    for name, shape in shapes.items():
        if name not in tensors:
            sys.exit(f"missing tensor {name}")
        if tuple(tensors[name].shape) != shape:
            sys.exit(f"{name} has shape {tuple(tensors[name].shape)}, expected {shape}")
        picked[name] = tensors[name]
    metadata = {
        "kind": "vgg16",
        "preprocess_mean": "0.485,0.456,0.406",
        "preprocess_std": "0.229,0.224,0.225",
    }
    write_archive(args.dst, picked, metadata)
    print(f"wrote {len(picked)} tensors to {args.dst}")


if __name__ == "__main__":
    main()
