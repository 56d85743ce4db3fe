#!/usr/bin/env python3
"""Export ImageNet-pretrained torchvision weights into a teacher archive.

The CLI and library accept the produced file via --teacher-weights (config
key teacher_weights). Only the stem and residual stages 1-3 are exported;
the classifier head and stage 4 are not used by the extractor.

Usage:
    python3 tools/export_teacher.py --arch wide_resnet50 --out wres50.tw
"""

import argparse
import json
import struct

import numpy as np
import torch
import torchvision

ARCHS = {
    "resnet18": torchvision.models.resnet18,
    "resnet50": torchvision.models.resnet50,
    "wide_resnet50": torchvision.models.wide_resnet50_2,
}

MAGIC = b"MRKDTW01"


def rename(key: str):
    """torchvision state_dict key -> archive tensor name, or None to skip."""
    if key.endswith("num_batches_tracked"):
        return None
    if key.startswith(("fc.", "layer4.")):
        return None
    if key.startswith("conv1."):
        return key.replace("conv1.", "stem.conv.")
    if key.startswith("bn1."):
        return key.replace("bn1.", "stem.bn.")
    if key.startswith("layer"):
        key = key.replace("downsample.0.", "proj.")
        key = key.replace("downsample.1.", "proj_bn.")
        return key
    return None


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--arch", choices=sorted(ARCHS), required=True)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    model = ARCHS[args.arch](weights="IMAGENET1K_V1")
    model.eval()

    tensors = []
    for key, value in model.state_dict().items():
        name = rename(key)
        if name is None:
            continue
        arr = value.detach().cpu().numpy().astype("<f8")
        if arr.ndim == 4:  # conv [out, in, k, k] -> [out, in*k*k]
            arr = arr.reshape(arr.shape[0], -1)
        tensors.append((name, np.ascontiguousarray(arr)))

    meta = {
        "arch": args.arch,
        "source": "torchvision IMAGENET1K_V1",
        "tensors": [
            {"name": n, "shape": list(a.shape), "numel": int(a.size)} for n, a in tensors
        ],
    }
    blob = json.dumps(meta).encode()
    with open(args.out, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, arr in tensors:
            f.write(arr.tobytes())
    total = sum(a.size for _, a in tensors)
    print(f"wrote {args.out}: {len(tensors)} tensors, {total} parameters")


if __name__ == "__main__":
    main()
