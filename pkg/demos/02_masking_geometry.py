"""
Patch geometry, element-restricted masking and patch labels
============================================================

Walks through how element boxes on the 0-1000 grid turn into patch
indices, masks and multi-label patch targets.
"""

import numpy as np

from patentfig.corpus import BoundingBox, ElementBox, ElementCategory
from patentfig.losses import pc_loss
from patentfig.masking import build_patch_grid, build_patch_labels, eligible_patches, patches_for_box, plan_figure

# a 384x384 figure cut into 16 pixel patches
grid = build_patch_grid(384, 384, 16)
print("patches:", grid.patch_count, "columns:", grid.columns)

# roughly pixels [10, 40) in both directions: a 3x3 block of patches
box = BoundingBox(27, 27, 104, 104)
print("patches under box:", sorted(patches_for_box(grid, box)))

# a toy diagram: two nodes, their labels, one arrow and the figure label
elements = [
    ElementBox(ElementCategory.NODE, BoundingBox(100, 100, 400, 300)),
    ElementBox(ElementCategory.NODE_LABEL, BoundingBox(150, 140, 220, 180)),
    ElementBox(ElementCategory.NODE, BoundingBox(600, 100, 900, 300)),
    ElementBox(ElementCategory.NODE_LABEL, BoundingBox(650, 140, 720, 180)),
    ElementBox(ElementCategory.ARROW, BoundingBox(400, 190, 600, 210)),
    ElementBox(ElementCategory.FIGURE_LABEL, BoundingBox(420, 900, 580, 960)),
]
eligible = eligible_patches(grid, elements)
print("element-bearing patches:", len(eligible), "of", grid.patch_count)

# 40% of the eligible patches and 30% of the OCR tokens, fixed by the seed
plan = plan_figure("DEMO-F01", token_ids=list(range(23)), eligible=eligible, global_seed=7)
print("masked tokens:", plan.masked_token_indices)
print("masked patches:", len(plan.masked_patch_indices), "all eligible:", set(plan.masked_patch_indices) <= eligible)

# the blank background never gets masked
blank = set(range(grid.patch_count)) - eligible
print("blank patches masked:", len(blank & set(plan.masked_patch_indices)))

# multi-label patch targets, columns Node, NodeLabel, FigureLabel, Text, Arrow
y = build_patch_labels(grid, elements).labels
print("patches per category:", dict(zip(["Node", "NodeLabel", "FigureLabel", "Text", "Arrow"], y.sum(axis=0))))

# an uninformed classifier pays ln 2 per category
print("pc loss at 0.5:", pc_loss(np.full(y.shape, 0.5), y))
