"""On-disk fixtures for the command-line tests."""
import json
from pathlib import Path

import numpy as np

from segtricks.tensorio import write_png, write_tensor

from oracles import corloc_fixture, jittered_fixture


def refine_dirs(root: Path, n=3, size=24, seed=0):
    masks, images = root / "masks", root / "images"
    masks.mkdir(parents=True)
    images.mkdir(parents=True)
    for k, (img, _, soft) in enumerate(jittered_fixture(n, size=size, seed=seed)):
        write_png(masks / f"im{k}.png", soft)
        write_png(images / f"im{k}.png", img)
    return masks, images


def saliency_dirs(root: Path, seed=0):
    """Four crafted prediction / ground-truth pairs."""
    rng = np.random.default_rng(seed)
    pred, gt = root / "pred", root / "gt"
    pred.mkdir(parents=True)
    gt.mkdir(parents=True)
    g = np.zeros((8, 8))
    g[2:6, 2:6] = 1.0
    pairs = {
        "a_exact": (g, g),
        "b_shifted": (np.roll(g, 1, axis=1), g),
        "c_graded": (np.clip(g * 0.7 + 0.2 * rng.random((8, 8)), 0, 1), g),
        "d_empty_pred": (np.zeros((8, 8)), g),
    }
    for stem, (p, t) in pairs.items():
        write_png(pred / f"{stem}.png", p)
        write_png(gt / f"{stem}.png", t)
    return pred, gt


def detect_fixture(root: Path):
    pred = root / "pred"
    pred.mkdir(parents=True)
    lines = []
    for name, mask, boxes, _ in corloc_fixture():
        write_png(pred / f"{name}.png", mask)
        lines.append(name + " " + " ".join(" ".join(str(v) for v in b) for b in boxes))
    box_file = root / "boxes.txt"
    box_file.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return pred, box_file


def losses_fixture(root: Path, seed=0):
    """Two-block features (4x4 grid), masks aligned with the blocks, matching image."""
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    feats = np.zeros((4, 4, 3), dtype=np.float32)
    feats[:, :2] = [1.0, 0.0, 0.0]
    feats[:, 2:] = [0.0, 1.0, 0.0]
    coarse = np.zeros((4, 4))
    coarse[:, 2:] = 1.0
    fine = np.kron(coarse, np.ones((4, 4)))
    image = np.repeat((0.2 + 0.6 * fine)[:, :, None], 3, axis=2) + 0.02 * rng.random((16, 16, 3))
    write_tensor(root / "feats.stns", feats)
    write_png(root / "coarse.png", coarse)
    write_png(root / "fine.png", fine)
    write_png(root / "image.png", np.clip(image, 0, 1))
    (root / "weights.json").write_text(json.dumps({"lambda_sr": 0.5, "lambda_gtv_fine": 0.1,
                                                   "lambda_gtv_coarse": 0.2}), encoding="utf-8")
    return {k: root / v for k, v in (("features", "feats.stns"), ("coarse", "coarse.png"),
                                     ("fine", "fine.png"), ("image", "image.png"),
                                     ("weights", "weights.json"))}


def small_toy_config(root: Path, steps=40):
    path = root / "toy.json"
    path.write_text(json.dumps({"steps": steps, "dataset": {"n": 3, "height": 32, "width": 32}}),
                    encoding="utf-8")
    return path
