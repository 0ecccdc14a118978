#!/usr/bin/env python3
"""Writes tests/data/toy_golden.json: toy-network logits, activations and
softmax scores for fixtures/images/fx00.png (224x224, so no resize), computed
with numpy from the network's definition."""

import json
import pathlib

import numpy as np
from PIL import Image

ROOT = pathlib.Path(__file__).resolve().parent.parent

PROFILE = np.array([[0.05, 0.10, 0.05], [0.10, 1.00, 0.10], [0.05, 0.10, 0.05]])
MIX = np.array([[1.0, -0.5, -0.5], [-0.5, 1.0, -0.5]])
BIAS = np.array([-0.3, -0.3])
HEAD = np.array([[2.0, -1.0], [-1.0, 2.0], [-0.75, -0.75]])
HEAD_BIAS = np.array([0.0, 0.0, 0.4])
MEAN = np.array([0.485, 0.456, 0.406])
STD = np.array([0.229, 0.224, 0.225])


def forward(x):
    cells = x.reshape(3, 8, 28, 8, 28).mean(axis=(2, 4))
    padded = np.pad(cells, ((0, 0), (1, 1), (1, 1)))
    acts = np.zeros((2, 8, 8))
    for k in range(2):
        kernel = MIX[k][:, None, None] * PROFILE[None, :, :]
        for y in range(8):
            for x_ in range(8):
                acts[k, y, x_] = BIAS[k] + np.sum(kernel * padded[:, y:y + 3, x_:x_ + 3])
    acts = np.maximum(acts, 0.0)
    logits = HEAD @ acts.mean(axis=(1, 2)) + HEAD_BIAS
    e = np.exp(logits - logits.max())
    return acts, logits, e / e.sum()


def main():
    img = np.asarray(Image.open(ROOT / "fixtures/images/fx00.png").convert("RGB"), dtype=np.float64)
    x = ((img / 255.0 - MEAN) / STD).transpose(2, 0, 1)
    acts, logits, probs = forward(x)
    out = {
        "image": "fixtures/images/fx00.png",
        "logits": logits.tolist(),
        "softmax": probs.tolist(),
        "activations": acts.tolist(),
    }
    path = ROOT / "tests/data/toy_golden.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(out, indent=1) + "\n")


if __name__ == "__main__":
    main()
