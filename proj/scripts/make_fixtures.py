#!/usr/bin/env python3
# Copyright 2026 The Gracile Authors
# SPDX-License-Identifier: Apache-2.0
"""Regenerates the committed MNIST fixtures under fixtures/.

Trains the small MNIST architectures with PyTorch on the 5,000-sample MNIST
subset bundled in the mlxtend wheel (500 images per class). The last 100
images of each class form the 1,000-sample validation slice; the remaining
4,000 images are used for training.

Usage: make_fixtures.py --mnist-npz mnist5k.npz --out fixtures/
The npz holds X (5000x784 uint8) and y (5000 uint8).
"""

import argparse
import json
import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

MEAN, STD = 0.1307, 0.3081
DTYPE_F32 = 0


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_model(path, arch, params):
    """params: ordered list of (name, float32 ndarray)."""
    blob = bytearray(b"NNXF")
    blob += struct.pack("<I", 1)
    text = canonical_json(arch).encode("utf-8")
    blob += struct.pack("<I", len(text)) + text
    blob += struct.pack("<I", len(params))
    for name, arr in params:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        blob += struct.pack("<I", len(raw)) + raw
        blob += struct.pack("<B", DTYPE_F32)
        blob += struct.pack("<I", arr.ndim)
        for d in arr.shape:
            blob += struct.pack("<I", d)
        payload = arr.tobytes()
        blob += struct.pack("<Q", len(payload)) + payload
    Path(path).write_bytes(bytes(blob))


def write_dataset(path, images, labels, num_classes):
    images = np.ascontiguousarray(images, dtype="<f4")
    blob = bytearray(b"NNXD")
    blob += struct.pack("<I", 1)
    blob += struct.pack("<I", num_classes)
    shape = images.shape[1:]
    blob += struct.pack("<I", len(shape))
    for d in shape:
        blob += struct.pack("<I", d)
    blob += struct.pack("<I", images.shape[0])
    for img, lab in zip(images, labels):
        blob += struct.pack("<H", int(lab))
        blob += img.tobytes()
    Path(path).write_bytes(bytes(blob))


def act(kind, slope=None):
    a = {"kind": kind}
    if slope is not None:
        a["slope"] = slope
    return a


def conv(name, cin, cout, k, act_, stride=1, padding=0):
    return {"kind": "conv2d", "name": name, "in_channels": cin, "out_channels": cout,
            "kernel": k, "stride": stride, "padding": padding,
            "weight": name + ".weight", "bias": name + ".bias", "activation": act_}


def fc(name, nin, nout, act_):
    return {"kind": "fc", "name": name, "in_features": nin, "out_features": nout,
            "weight": name + ".weight", "bias": name + ".bias", "activation": act_}


def pool(name):
    return {"kind": "maxpool2d", "name": name, "pool": 2, "stride": 2, "activation": act("none")}


def flatten(name="flatten"):
    return {"kind": "flatten", "name": name, "activation": act("none")}


# ---------------------------------------------------------------- models


class Base(nn.Module):
    """conv5x5x10 -> pool -> conv5x5x20 -> pool -> fc50 -> fc10."""

    def __init__(self, prelu=False):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 10, 5)
        self.conv2 = nn.Conv2d(10, 20, 5)
        self.fc1 = nn.Linear(320, 50)
        self.fc2 = nn.Linear(50, 10)
        self.prelu = prelu
        if prelu:
            self.act1, self.act2, self.act3 = nn.PReLU(), nn.PReLU(), nn.PReLU()
        else:
            self.act1 = self.act2 = self.act3 = nn.ReLU()

    def features(self, x):
        x = F.max_pool2d(self.act1(self.conv1(x)), 2)
        x = F.max_pool2d(self.act2(self.conv2(x)), 2)
        return self.act3(self.fc1(x.flatten(1)))

    def forward(self, x):
        return self.fc2(self.features(x))

    def arch(self, name):
        if self.prelu:
            a1, a2, a3 = act("prelu", "act1.weight"), act("prelu", "act2.weight"), act("prelu", "act3.weight")
        else:
            a1 = a2 = a3 = act("relu")
        layers = [conv("conv1", 1, 10, 5, a1), pool("pool1"), conv("conv2", 10, 20, 5, a2), pool("pool2"),
                  flatten(), fc("fc1", 320, 50, a3), fc("fc2", 50, 10, act("softmax"))]
        return {"name": name, "input_shape": [1, 28, 28], "num_classes": 10, "layers": layers}

    def export(self):
        out = []
        for n in ["conv1", "conv2", "fc1", "fc2"]:
            m = getattr(self, n)
            out.append((n + ".weight", m.weight.detach().numpy()))
            out.append((n + ".bias", m.bias.detach().numpy()))
            if self.prelu and n != "fc2":
                slope = {"conv1": self.act1, "conv2": self.act2, "fc1": self.act3}[n]
                out.append((f"act{['conv1', 'conv2', 'fc1'].index(n) + 1}.weight", slope.weight.detach().numpy()))
        return out


class Student(nn.Module):
    """Base trunk (conv1, conv2, fc1) frozen from a teacher; fresh 5-class head."""

    def __init__(self, teacher):
        super().__init__()
        self.trunk = teacher
        for p in self.trunk.parameters():
            p.requires_grad_(False)
        self.head = nn.Linear(50, 5)

    def forward(self, x):
        return self.head(self.trunk.features(x))

    def arch(self, name):
        a = self.trunk.arch(name)
        a["num_classes"] = 5
        a["layers"][-1] = fc("head", 50, 5, act("softmax"))
        return a

    def export(self):
        out = [p for p in self.trunk.export() if not p[0].startswith("fc2.")]
        out.append(("head.weight", self.head.weight.detach().numpy()))
        out.append(("head.bias", self.head.bias.detach().numpy()))
        return out


class BinarizeSTE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, w):
        ctx.save_for_backward(w)
        scale = w.abs().mean()
        return torch.where(w >= 0, scale, -scale)

    @staticmethod
    def backward(ctx, g):
        (w,) = ctx.saved_tensors
        return g * (w.abs() <= 1).to(g.dtype)


class LeNet5(nn.Module):
    """LeNet5 for 28x28 inputs (first conv padded by 2).

    With binary=True every parameter tensor except the first convolution's is
    replaced in the forward pass by sign(w) * mean(|w|).
    """

    def __init__(self, binary=False):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 6, 5, padding=2)
        self.conv2 = nn.Conv2d(6, 16, 5)
        self.fc1 = nn.Linear(400, 120)
        self.fc2 = nn.Linear(120, 84)
        self.fc3 = nn.Linear(84, 10)
        self.binary = binary

    def _p(self, t):
        return BinarizeSTE.apply(t) if self.binary else t

    def forward(self, x):
        x = F.max_pool2d(F.relu(self.conv1(x)), 2)
        x = F.max_pool2d(F.relu(F.conv2d(x, self._p(self.conv2.weight), self._p(self.conv2.bias))), 2)
        x = x.flatten(1)
        x = F.relu(F.linear(x, self._p(self.fc1.weight), self._p(self.fc1.bias)))
        x = F.relu(F.linear(x, self._p(self.fc2.weight), self._p(self.fc2.bias)))
        return F.linear(x, self._p(self.fc3.weight), self._p(self.fc3.bias))

    def arch(self, name):
        layers = [conv("conv1", 1, 6, 5, act("relu"), padding=2), pool("pool1"),
                  conv("conv2", 6, 16, 5, act("relu")), pool("pool2"), flatten(),
                  fc("fc1", 400, 120, act("relu")), fc("fc2", 120, 84, act("relu")),
                  fc("fc3", 84, 10, act("softmax"))]
        return {"name": name, "input_shape": [1, 28, 28], "num_classes": 10, "layers": layers}

    def export(self):
        out = []
        for n in ["conv1", "conv2", "fc1", "fc2", "fc3"]:
            m = getattr(self, n)
            out.append((n + ".weight", m.weight.detach().numpy()))
            out.append((n + ".bias", m.bias.detach().numpy()))
        return out


# ---------------------------------------------------------------- training


def train(model, xs, ys, epochs, lr, momentum, batch, step_every, gamma, seed, optimizer="sgd"):
    g = torch.Generator().manual_seed(seed)
    params = [p for p in model.parameters() if p.requires_grad]
    if optimizer == "adam":
        opt = torch.optim.Adam(params, lr=lr)
    else:
        opt = torch.optim.SGD(params, lr=lr, momentum=momentum)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=step_every, gamma=gamma)
    n = xs.shape[0]
    for _ in range(epochs):
        model.train()
        perm = torch.randperm(n, generator=g)
        for i in range(0, n, batch):
            idx = perm[i:i + batch]
            opt.zero_grad()
            loss = F.cross_entropy(model(xs[idx]), ys[idx])
            loss.backward()
            opt.step()
        sched.step()
    model.eval()
    return model


def accuracy(model, xs, ys):
    with torch.no_grad():
        return (model(xs).argmax(1) == ys).float().mean().item()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mnist-npz", required=True)
    ap.add_argument("--out", default="fixtures")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--epochs", type=int, default=40)
    # The reference schedule is defined for 60,000 training images; the
    # subset has 4,000, so epochs (and the decay interval) are stretched by
    # this factor to keep the number of optimizer steps comparable.
    ap.add_argument("--epoch-scale", type=int, default=15)
    args = ap.parse_args()

    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    d = np.load(args.mnist_npz)
    X = ((d["X"].astype(np.float32) / 255.0 - MEAN) / STD).reshape(-1, 1, 28, 28).astype(np.float32)
    y = d["y"].astype(np.int64)
    val_idx, train_idx = [], []
    for c in range(10):
        idx = np.nonzero(y == c)[0]
        train_idx.extend(idx[:-100])
        val_idx.extend(idx[-100:])
    val_idx = np.array(sorted(val_idx))
    train_idx = np.array(sorted(train_idx))
    xt, yt = torch.from_numpy(X[train_idx]), torch.from_numpy(y[train_idx])
    xv, yv = torch.from_numpy(X[val_idx]), torch.from_numpy(y[val_idx])

    write_dataset(out / "mnist_val1k.nnxd", X[val_idx], y[val_idx], 10)
    write_dataset(out / "mnist_val1k_pairs.nnxd", X[val_idx], y[val_idx] // 2, 5)

    summary = {}
    print("train", len(train_idx), "val", len(val_idx), flush=True)
    # Appendix-style schedule: SGD, lr 0.01, batch 64, momentum 0.1, lr x0.1 every 10 epochs.
    sgd = dict(epochs=args.epochs * args.epoch_scale, lr=0.01, momentum=0.1, batch=64,
               step_every=10 * args.epoch_scale, gamma=0.1)

    torch.manual_seed(args.seed)
    base = train(Base(), xt, yt, seed=args.seed, **sgd)
    write_model(out / "mnist_b.nnxf", base.arch("mnist_b"), base.export())
    summary["mnist_b"] = accuracy(base, xv, yv)

    torch.manual_seed(args.seed)
    prelu = train(Base(prelu=True), xt, yt, seed=args.seed, **sgd)
    write_model(out / "mnist_b_prelu.nnxf", prelu.arch("mnist_b_prelu"), prelu.export())
    summary["mnist_b_prelu"] = accuracy(prelu, xv, yv)

    torch.manual_seed(args.seed)
    l5 = train(LeNet5(), xt, yt, seed=args.seed, **sgd)
    write_model(out / "mnist_l5.nnxf", l5.arch("mnist_l5"), l5.export())
    summary["mnist_l5"] = accuracy(l5, xv, yv)

    torch.manual_seed(args.seed)
    xnor = train(LeNet5(binary=True), xt, yt, epochs=args.epochs, lr=1e-3, momentum=0.0, batch=64,
                 step_every=15, gamma=0.1, seed=args.seed, optimizer="adam")
    write_model(out / "mnist_l5_xnor.nnxf", xnor.arch("mnist_l5_xnor"), xnor.export())
    summary["mnist_l5_xnor"] = accuracy(xnor, xv, yv)

    torch.manual_seed(args.seed)
    student = train(Student(base), xt, yt // 2, seed=args.seed, **sgd)
    write_model(out / "mnist_b_student.nnxf", student.arch("mnist_b_student"), student.export())
    summary["mnist_b_student"] = accuracy(student, xv, yv // 2)

    summary["schedule"] = {"sgd_epochs": sgd["epochs"], "sgd_step_every": sgd["step_every"]}
    (out / "fixtures.json").write_text(json.dumps(
        {"seed": args.seed, "train_samples": int(len(train_idx)), "val_samples": int(len(val_idx)),
         "framework_accuracy": summary}, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
