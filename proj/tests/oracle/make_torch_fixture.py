"""Writes tiny_resnet.mck: a small residual network built from torchvision's
BasicBlock, plus an input batch and the logits / gradients torch computes for
it. The C++ network is checked against these values."""

import json
import struct
import sys
from pathlib import Path

import torch
from torch import nn
from torchvision.models.resnet import BasicBlock


class TinyResNet(nn.Module):
    def __init__(self, width=4, blocks=(1, 1), classes=3):
        super().__init__()
        self.conv1 = nn.Conv2d(3, width, 7, 2, 3, bias=False)
        self.bn1 = nn.BatchNorm2d(width)
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool2d(3, 2, 1)
        inplanes = width
        for s, n in enumerate(blocks):
            planes = width << s
            stride = 1 if s == 0 else 2
            layers = []
            for b in range(n):
                down = None
                if b == 0 and (stride != 1 or inplanes != planes):
                    down = nn.Sequential(nn.Conv2d(inplanes, planes, 1, stride, bias=False), nn.BatchNorm2d(planes))
                layers.append(BasicBlock(inplanes, planes, stride if b == 0 else 1, down))
                inplanes = planes
            setattr(self, f"layer{s + 1}", nn.Sequential(*layers))
        self.n_stages = len(blocks)
        self.fc = nn.Linear(inplanes, classes)

    def forward(self, x):
        x = self.maxpool(self.relu(self.bn1(self.conv1(x))))
        for s in range(self.n_stages):
            x = getattr(self, f"layer{s + 1}")(x)
        return self.fc(torch.flatten(nn.functional.adaptive_avg_pool2d(x, 1), 1))


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


def main(out):
    torch.manual_seed(20240611)
    net = TinyResNet()
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, nn.BatchNorm2d):
                m.weight.uniform_(0.5, 1.5)
                m.bias.uniform_(-0.2, 0.2)
                m.running_mean.uniform_(-0.3, 0.3)
                m.running_var.uniform_(0.5, 2.0)
    x = torch.randn(2, 3, 24, 20)
    probe = torch.randn(2, 3)

    net.eval()
    with torch.no_grad():
        eval_logits = net(x)

    net.train()
    state = {k: v.clone() for k, v in net.state_dict().items() if not k.endswith("num_batches_tracked")}
    train_logits = net(x)
    (train_logits * probe).sum().backward()

    tensors = dict(state)
    tensors["oracle.input"] = x
    tensors["oracle.probe"] = probe
    tensors["oracle.logits_eval"] = eval_logits
    tensors["oracle.logits_train"] = train_logits
    for name, p in net.named_parameters():
        tensors["oracle.grad." + name] = p.grad
    write_archive(out, tensors, {"width": 4, "blocks": [1, 1], "classes": 3})


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else str(Path(__file__).with_name("tiny_resnet.mck")))
