"""Demo rendering: the last frame with ground-truth and predicted intent glyphs.

Every ground-truth box is outlined in its class color. Above each
pedestrian sit two filled squares: the left one in the true intent color,
the right one in the predicted intent color (white when the detector
missed the pedestrian). A JSON sidecar lists the same glyphs.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from pedintent.association import pipeline_single_shot
from pedintent.eval_bench.metrics import match_assignments
from pedintent.scenario_gen import CROSS, NOT_CROSS, AgentClass

SCALE = 2
GLYPH = 6
INTENT_COLORS = {CROSS: (255, 0, 0), NOT_CROSS: (0, 255, 0)}
MISSED_COLOR = (255, 255, 255)
CLASS_COLORS = {
    AgentClass.PEDESTRIAN: (255, 255, 0),
    AgentClass.CROSSWALK: (0, 200, 255),
    AgentClass.VEHICLE: (255, 128, 255),
    AgentClass.TRAFFIC_LIGHT: (255, 140, 0),
}


def glyph_anchors(box) -> tuple[tuple[int, int], tuple[int, int]]:
    """Top-left pixels of the (ground truth, prediction) glyphs in the upscaled image."""
    cx, cy, w, h = box
    x = max(int(round((cx - w / 2) * SCALE)), 0)
    y = max(int(round((cy - h / 2) * SCALE)) - GLYPH - 2, 0)
    return (x, y), (x + GLYPH + 1, y)


def render_demo(model, frames, annotations, grid, out_dir, stem: str, eval_cfg: dict | None = None):
    ev = eval_cfg or {"conf_threshold": 0.5, "nms_iou": 0.45}
    result = pipeline_single_shot(frames, model, grid, ev["conf_threshold"], ev["nms_iou"])
    last = np.asarray(frames[-1].numpy() if hasattr(frames, "numpy") else frames[-1])
    img = Image.fromarray(np.rint(last.transpose(1, 2, 0) * 255).astype(np.uint8)).resize(
        (last.shape[2] * SCALE, last.shape[1] * SCALE), Image.NEAREST
    )
    draw = ImageDraw.Draw(img)
    glyphs = []
    for a in annotations[-1]:
        x0, y0, x1, y1 = (v * SCALE for v in a.corners())
        draw.rectangle([x0, y0, x1 - 1, y1 - 1], outline=CLASS_COLORS[a.cls], width=1)
    peds = [a for a in annotations[-1] if a.cls == AgentClass.PEDESTRIAN]
    for gt, assignment in match_assignments(result.assignments, peds):  # glyphs last so no outline covers them
        if assignment is None:
            color, pred, prob = MISSED_COLOR, None, None
        else:
            pred = CROSS if assignment.crossing else NOT_CROSS
            color, prob = INTENT_COLORS[pred], assignment.intent_prob
        (gx, gy), (px, py) = glyph_anchors(gt.box)
        draw.rectangle([gx, gy, gx + GLYPH - 1, gy + GLYPH - 1], fill=INTENT_COLORS[gt.intent])
        draw.rectangle([px, py, px + GLYPH - 1, py + GLYPH - 1], fill=color)
        glyphs.append(
            {
                "track_id": gt.track_id,
                "box": list(gt.box),
                "gt_intent": gt.intent,
                "pred_intent": pred,
                "cross_prob": prob,
                "gt_glyph_xy": [gx, gy],
                "pred_glyph_xy": [px, py],
            }
        )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{stem}.png"
    img.save(path)
    strip = np.concatenate([np.asarray(f.numpy() if hasattr(f, "numpy") else f) for f in frames], axis=2)
    Image.fromarray(np.rint(strip.transpose(1, 2, 0) * 255).astype(np.uint8)).save(out / f"{stem}_frames.png")
    (out / f"{stem}.json").write_text(json.dumps({"glyphs": glyphs, "scale": SCALE, "glyph_size": GLYPH}, indent=2))
    return path, glyphs
