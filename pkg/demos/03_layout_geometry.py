"""From per-column boundaries back to a room: corner recovery and IoU.

The layout head predicts, for each image column, where the ceiling and floor
boundaries are and how likely a wall corner is. This walks through turning
those three rows into a floor plan and scoring it.

    python demos/03_layout_geometry.py
"""
import numpy as np

from hohonet.erp import LayoutGT1D, layout_1d, sample_scene
from hohonet.metrics import layout_1d_to_corners, layout_iou

H, W = 256, 512
scene = sample_scene(seed=2, index=0)
truth = scene.corners_xy()
rows = layout_1d(scene, H, W)
print("true floor corners (camera-centred):\n", np.round(truth, 3))

corners, heights = layout_1d_to_corners(rows, H, W, cam_height=scene.cam[2])
print("recovered from the boundary rows:\n", np.round(corners, 3))
print("recovered ceiling height", round(heights[1], 3), "true", round(scene.size[2], 3))
print("2D / 3D IoU against truth:", np.round(layout_iou(corners, truth, heights, (0.0, scene.size[2])), 4))

# A floor boundary pushed a few rows towards the horizon reads as a larger room.
arr = rows.as_array().copy()
arr[1] -= 3
noisy = LayoutGT1D.from_array(arr)
c2, h2 = layout_1d_to_corners(noisy, H, W, cam_height=scene.cam[2])
print("\nwith the floor line 3 rows higher, IoU drops to", np.round(layout_iou(c2, truth, h2, (0.0, scene.size[2])), 4))
