"""Export torchvision's ImageNet ResNeXt-50 (32x4d) weights to safetensors.

Usage: python scripts/export_resnext50_weights.py weights/resnext50_32x4d.safetensors

Needs torch, torchvision and safetensors. Tensor names are kept as
torchvision writes them; the classifier and BatchNorm step counters are
dropped.
"""

import argparse
from pathlib import Path

import torch
from safetensors.torch import save_file
from torchvision.models import ResNeXt50_32X4D_Weights, resnext50_32x4d


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out", type=Path)
    args = parser.parse_args()

    model = resnext50_32x4d(weights=ResNeXt50_32X4D_Weights.IMAGENET1K_V1)
    tensors = {
        name: t.detach().to(torch.float32).contiguous()
        for name, t in model.state_dict().items()
        if not name.startswith("fc.") and not name.endswith("num_batches_tracked")
    }
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_file(tensors, str(args.out))
    print(f"wrote {len(tensors)} tensors to {args.out}")


if __name__ == "__main__":
    main()
