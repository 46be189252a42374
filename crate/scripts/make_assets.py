"""Regenerates the bundled desk-scale models and datasets.

Writes into crates/evocompress/assets/:
  spirals.csv, mlp.evc   two-spiral dataset and a 2-32-32-2 MLP
  bars.csv, cnn.evc      8x8 bar-pattern images and a small 4-layer CNN

The reference accuracy stored in each manifest is computed by a plain numpy
float64 forward pass on the evenly spaced 20% validation subset.
"""

import json
import math
import struct
from pathlib import Path

import numpy as np
import torch
from torch import nn

OUT = Path(__file__).resolve().parent.parent / "crates" / "evocompress" / "assets"
VALIDATION_FRACTION = 0.2


def spirals(m=400, seed=0):
    rng = np.random.default_rng(seed)
    half = m // 2
    t = np.sqrt(rng.uniform(0.0, 1.0, half)) * 3.0 * math.pi
    x0 = np.stack([t * np.cos(t), t * np.sin(t)], axis=1) / (3.0 * math.pi)
    x1 = -x0
    x = np.concatenate([x0, x1]) + rng.normal(0.0, 0.05, (2 * half, 2))
    y = np.array([0] * half + [1] * half)
    perm = rng.permutation(2 * half)
    return x[perm].astype(np.float32), y[perm]


def bars(m=400, seed=1):
    """Four classes: horizontal bar, vertical bar, main diagonal, anti-diagonal."""
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for i in range(m):
        c = i % 4
        img = rng.normal(0.0, 0.7, (8, 8))
        p = rng.integers(1, 7)
        if c == 0:
            img[p, :] += 1.0
        elif c == 1:
            img[:, p] += 1.0
        elif c == 2:
            img += np.eye(8)
        else:
            img += np.fliplr(np.eye(8))
        xs.append(img.reshape(-1))
        ys.append(c)
    perm = rng.permutation(m)
    return np.array(xs, dtype=np.float32)[perm], np.array(ys)[perm]


def subset_indices(m, fraction=VALIDATION_FRACTION):
    count = max(1, min(m, math.ceil(fraction * m - 1e-9)))
    return [j * m // count for j in range(count)]


def conv2d(x, w, b, stride, padding):
    c, h, wd = x.shape
    m, n, k, _ = w.shape
    xp = np.zeros((c, h + 2 * padding, wd + 2 * padding))
    xp[:, padding : padding + h, padding : padding + wd] = x
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((m, ho, wo))
    for o in range(m):
        for i in range(ho):
            for j in range(wo):
                patch = xp[:, i * stride : i * stride + k, j * stride : j * stride + k]
                out[o, i, j] = np.sum(patch * w[o]) + b[o]
    return out


def oracle_predict(layers, tensors, x):
    """Straight-line float64 forward pass over the manifest description."""
    act = x.astype(np.float64)
    spatial = False
    for spec, (w, b) in zip(layers, tensors):
        w = w.astype(np.float64)
        b = b.astype(np.float64)
        if spec["kind"] == "fully_connected":
            if spatial:
                act = act.mean(axis=(1, 2))
                spatial = False
            act = w @ act.reshape(-1) + b
        else:
            if not spatial:
                act = act.reshape(spec["n"], spec["h_in"], spec["w_in"])
                spatial = True
            act = conv2d(act, w.reshape(spec["m"], spec["n"], spec["k"], spec["k"]), b, spec["stride"], spec["padding"])
        if spec["has_relu"]:
            act = np.maximum(act, 0.0)
    logits = act.reshape(-1) if not spatial else act.mean(axis=(1, 2))
    return int(np.argmax(logits))


def write_container(path, name, layers, tensors, reference_accuracy):
    manifest = {"name": name, "layers": layers, "reference_accuracy": reference_accuracy}
    header = json.dumps(manifest, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for w, b in tensors:
            f.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def write_csv(path, x, y):
    d = x.shape[1]
    with open(path, "w") as f:
        f.write(",".join([f"x{i}" for i in range(d)] + ["label"]) + "\n")
        for row, label in zip(x, y):
            f.write(",".join(repr(float(v)) for v in row) + f",{int(label)}\n")


def train(net, x, y, epochs, lr):
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    xt = torch.from_numpy(x)
    yt = torch.from_numpy(y).long()
    for _ in range(epochs):
        opt.zero_grad()
        loss = nn.functional.cross_entropy(net(xt), yt)
        loss.backward()
        opt.step()
    return loss.item()


def reference_accuracy(layers, tensors, x, y):
    idx = subset_indices(len(y))
    correct = sum(oracle_predict(layers, tensors, x[i]) == y[i] for i in idx)
    return correct / len(idx)


def make_mlp():
    x, y = spirals()
    torch.manual_seed(0)
    net = nn.Sequential(nn.Linear(2, 32), nn.ReLU(), nn.Linear(32, 32), nn.ReLU(), nn.Linear(32, 2))
    loss = train(net, x, y, epochs=3000, lr=1e-2)
    layers = [
        {"kind": "fully_connected", "m": 32, "n": 2, "has_relu": True},
        {"kind": "fully_connected", "m": 32, "n": 32, "has_relu": True},
        {"kind": "fully_connected", "m": 2, "n": 32, "has_relu": False},
    ]
    tensors = [(net[i].weight.detach().numpy(), net[i].bias.detach().numpy()) for i in (0, 2, 4)]
    acc = reference_accuracy(layers, tensors, x, y)
    write_container(OUT / "mlp.evc", "spiral-mlp", layers, tensors, acc)
    write_csv(OUT / "spirals.csv", x, y)
    print(f"mlp: loss {loss:.4f}, reference accuracy {acc}")


class Gap(nn.Module):
    def forward(self, x):
        return x.mean(dim=(2, 3))


def make_cnn():
    x, y = bars()
    torch.manual_seed(1)
    net = nn.Sequential(
        nn.Unflatten(1, (1, 8, 8)),
        nn.Conv2d(1, 8, 3, padding=1),
        nn.ReLU(),
        nn.Conv2d(8, 16, 3, stride=2, padding=1),
        nn.ReLU(),
        nn.Conv2d(16, 16, 1),
        nn.ReLU(),
        Gap(),
        nn.Linear(16, 4),
    )
    loss = train(net, x, y, epochs=600, lr=1e-2)
    layers = [
        {"kind": "conv", "m": 8, "n": 1, "k": 3, "h_in": 8, "w_in": 8, "stride": 1, "padding": 1, "has_relu": True},
        {"kind": "conv", "m": 16, "n": 8, "k": 3, "h_in": 8, "w_in": 8, "stride": 2, "padding": 1, "has_relu": True},
        {"kind": "pointwise_conv", "m": 16, "n": 16, "k": 1, "h_in": 4, "w_in": 4, "stride": 1, "padding": 0, "has_relu": True},
        {"kind": "fully_connected", "m": 4, "n": 16, "has_relu": False},
    ]
    tensors = [
        (net[i].weight.detach().numpy().reshape(net[i].weight.shape[0], -1), net[i].bias.detach().numpy())
        for i in (1, 3, 5, 8)
    ]
    acc = reference_accuracy(layers, tensors, x, y)
    write_container(OUT / "cnn.evc", "bars-cnn", layers, tensors, acc)
    write_csv(OUT / "bars.csv", x, y)
    print(f"cnn: loss {loss:.4f}, reference accuracy {acc}")


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    make_mlp()
    make_cnn()
