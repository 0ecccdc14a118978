#!/usr/bin/env python3
"""Regenerates fixtures/: ten synthetic images with one red (class 0) or green
(class 1) patch on a textured gray background, plus annotations.jsonl and an
experiment config for the toy backend."""

import json
import pathlib

import numpy as np
from PIL import Image

ROOT = pathlib.Path(__file__).resolve().parent.parent / "fixtures"

# id, (height, width), class, patch box [x_min, y_min, x_max, y_max), format
SPECS = [
    ("fx00", (224, 224), 0, (40, 50, 130, 140), "png"),
    ("fx01", (300, 500), 1, (280, 60, 460, 210), "png"),
    ("fx02", (480, 640), 0, (60, 250, 300, 450), "jpg"),
    ("fx03", (256, 256), 1, (120, 20, 236, 130), "png"),
    ("fx04", (400, 300), 0, (150, 200, 280, 380), "png"),
    ("fx05", (224, 320), 1, (20, 100, 140, 210), "jpg"),
    ("fx06", (350, 350), 0, (100, 100, 260, 260), "png"),
    ("fx07", (500, 375), 1, (30, 30, 200, 230), "png"),
    ("fx08", (240, 400), 0, (240, 20, 380, 150), "jpg"),
    ("fx09", (320, 240), 1, (60, 160, 210, 300), "png"),
]

COLOURS = {0: (200, 40, 40), 1: (40, 190, 50)}


def render(size, cls, box, rng):
    h, w = size
    img = np.full((h, w, 3), 128.0)
    img += rng.normal(0.0, 6.0, size=(h, w, 1))
    x0, y0, x1, y1 = box
    img[y0:y1, x0:x1, :] = COLOURS[cls]
    img[y0:y1, x0:x1, :] += rng.normal(0.0, 4.0, size=(y1 - y0, x1 - x0, 3))
    return Image.fromarray(np.clip(img, 0, 255).astype(np.uint8))


def main():
    images = ROOT / "images"
    images.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20201016)
    lines = []
    for ident, size, cls, box, fmt in SPECS:
        img = render(size, cls, box, rng)
        if fmt == "jpg":
            img.save(images / f"{ident}.jpg", quality=95)
        else:
            img.save(images / f"{ident}.png")
        lines.append(json.dumps({"id": ident, "class": cls, "boxes": [list(box)]}))
    (ROOT / "annotations.jsonl").write_text("\n".join(lines) + "\n")
    config = {
        "backend": {"name": "toy", "layer": "conv"},
        "methods": ["cam", "gradcam", "gradcampp", "sgradcampp", "scorecam", "sscam", "iscam"],
        "hyperparams": {"n_steps": 10, "smooth_samples": 10, "sigma": 2.0, "seed": 0},
        "metrics": ["avg_drop", "avg_inc", "win", "ins_auc", "del_auc", "energy_pg"],
        "dataset": {"root": "images", "annotations": "annotations.jsonl", "seed": 0, "count": 10},
        "output_dir": "out",
        "workers": 1,
        "step_pixels": 224,
    }
    (ROOT / "experiment.json").write_text(json.dumps(config, indent=2) + "\n")


if __name__ == "__main__":
    main()
