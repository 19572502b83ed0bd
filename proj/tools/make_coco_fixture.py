#!/usr/bin/env python3
"""Generate the small COCO-style annotation fixture used by the tests.

Writes tests/fixtures/coco_mini/{annotations.json, images/*.png}. Every
instance area is either well above or well below the 1024-pixel threshold, so
the expected cutout count does not depend on rasterization details. The count
is computed here from shoelace polygon areas and run lengths and must equal
EXPECTED_CUTOUTS.
"""

import json
import math
import random
import sys
from pathlib import Path

from PIL import Image, ImageDraw

SIZE = 96
N_IMAGES = 20
MIN_AREA = 1024
EXPECTED_CUTOUTS = 37
CATEGORIES = [(1, "person"), (2, "dog"), (3, "cup")]


def shoelace(flat):
    pts = list(zip(flat[0::2], flat[1::2]))
    s = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:] + pts[:1]):
        s += x0 * y1 - x1 * y0
    return abs(s) / 2.0


def polygon(cx, cy, r, sides, rot):
    flat = []
    for k in range(sides):
        a = rot + 2 * math.pi * k / sides
        flat += [round(cx + r * math.cos(a), 2), round(cy + r * math.sin(a), 2)]
    return flat


def rle_rect(x0, y0, w, h):
    """Column-major run lengths of an axis-aligned rectangle, starting with background."""
    counts, value, run = [], 0, 0
    for x in range(SIZE):
        for y in range(SIZE):
            bit = 1 if (x0 <= x < x0 + w and y0 <= y < y0 + h) else 0
            if bit == value:
                run += 1
            else:
                counts.append(run)
                value, run = bit, 1
    counts.append(run)
    return counts


def main(out_dir):
    rng = random.Random(1234)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    images, annotations = [], []
    large = 0
    ann_id = 1
    # Large instances per image; sums to EXPECTED_CUTOUTS.
    plan = [2, 1, 3, 2, 2, 1, 2, 2, 3, 1, 2, 2, 1, 2, 2, 3, 2, 1, 2, 1]
    assert sum(plan) == EXPECTED_CUTOUTS and len(plan) == N_IMAGES

    for i in range(N_IMAGES):
        img = Image.new("RGB", (SIZE, SIZE))
        px = img.load()
        for y in range(SIZE):
            for x in range(SIZE):
                px[x, y] = (rng.randrange(60, 120), rng.randrange(90, 150), rng.randrange(60, 120))
        draw = ImageDraw.Draw(img)
        file_name = f"img{i:03d}.png"

        slots = [(26, 26), (70, 26), (26, 70), (70, 70)]
        rng.shuffle(slots)
        for j in range(plan[i]):
            cx, cy = slots[j]
            cat = rng.choice(CATEGORIES)[0]
            colour = (rng.randrange(150, 255), rng.randrange(0, 100), rng.randrange(0, 255))
            if i % 5 == 4 and j == 0:
                # Encoded as uncompressed run lengths.
                x0, y0, w, h = cx - 20, cy - 18, 40, 36
                area = w * h
                draw.rectangle([x0, y0, x0 + w - 1, y0 + h - 1], fill=colour)
                seg = {"size": [SIZE, SIZE], "counts": rle_rect(x0, y0, w, h)}
            else:
                r = rng.uniform(22.5, 23.5)
                flat = polygon(cx, cy, r, rng.choice([6, 8]), rng.uniform(0, math.pi))
                area = shoelace(flat)
                draw.polygon(list(zip(flat[0::2], flat[1::2])), fill=colour)
                seg = [flat]
            assert area > 1.25 * MIN_AREA, area
            large += 1
            annotations.append({"id": ann_id, "image_id": i + 1, "category_id": cat, "segmentation": seg,
                                "area": area, "iscrowd": 0})
            ann_id += 1

        # Small instances, well under the threshold.
        for _ in range(rng.randrange(1, 3)):
            cx, cy = rng.uniform(10, SIZE - 10), rng.uniform(10, SIZE - 10)
            flat = polygon(cx, cy, rng.uniform(5.0, 9.0), 6, rng.uniform(0, math.pi))
            area = shoelace(flat)
            assert area < 0.5 * MIN_AREA, area
            draw.polygon(list(zip(flat[0::2], flat[1::2])), fill=(240, 240, 20))
            annotations.append({"id": ann_id, "image_id": i + 1, "category_id": rng.choice(CATEGORIES)[0],
                                "segmentation": [flat], "area": area, "iscrowd": 0})
            ann_id += 1

        img.save(images_dir / file_name)
        images.append({"id": i + 1, "file_name": file_name, "width": SIZE, "height": SIZE})

    # A degenerate annotation with no pixels.
    annotations.append({"id": ann_id, "image_id": 1, "category_id": 1,
                        "segmentation": [[10.0, 10.0, 10.0, 10.0, 10.0, 10.0]], "area": 0.0, "iscrowd": 0})

    assert large == EXPECTED_CUTOUTS
    doc = {"images": images, "annotations": annotations,
           "categories": [{"id": c, "name": n} for c, n in CATEGORIES]}
    (out_dir / "annotations.json").write_text(json.dumps(doc, indent=1) + "\n")
    print(f"{len(images)} images, {len(annotations)} annotations, {large} at or above {MIN_AREA} px")


if __name__ == "__main__":
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "tests/fixtures/coco_mini"
    main(root)
