"""Converts a torchvision ResNet-18 state dict into a backbone weights archive.

usage: convert_torchvision.py resnet18.pth resnet18.mck
"""

import json
import struct
import sys
from pathlib import Path

import torch


def write_archive(path, tensors, meta):
    blob = bytearray(b"MAMMOCKP")
    blob += struct.pack("<I", 1)
    meta_bytes = json.dumps(meta).encode()
    blob += struct.pack("<I", len(meta_bytes)) + meta_bytes
    blob += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        t = tensors[name].detach().to(torch.float32).contiguous()
        nb = name.encode()
        blob += struct.pack("<H", len(nb)) + nb
        blob += struct.pack("<BB", 0, t.dim())
        blob += struct.pack(f"<{t.dim()}q", *t.shape)
        blob += t.numpy().astype("<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


def main(argv):
    if len(argv) != 3:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    state = torch.load(argv[1], map_location="cpu")
    if "state_dict" in state:
        state = state["state_dict"]
    kept = {k: v for k, v in state.items() if not k.endswith("num_batches_tracked") and not k.startswith("fc.")}
    write_archive(argv[2], kept, {"source": Path(argv[1]).name})
    print(f"wrote {len(kept)} tensors to {argv[2]}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
