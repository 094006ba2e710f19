"""Walkthrough: how the confidence-weighted projection behaves.

The pure style vector is the fused style vector with its content
component removed -- but only as much of it as the confidence weight
alpha = max(0, 1 - cos(s_r, c_r)) says is safe to remove.
"""

import numpy as np

from sdec import confidence_alpha, fuse, normalize, project_style

# ─── fusing two cues ───
style_text = np.array([1.0, 0.0, 0.0])
image_feat = np.array([0.6, 0.8, 0.0])
s_r = fuse(style_text, image_feat)
print(f"fused style vector: {np.round(s_r, 4)}")

# ─── alpha across the similarity range ───
print("\nalpha as a function of style/content similarity:")
c = np.array([1.0, 0.0])
for angle_deg in (0, 45, 90, 135, 180):
    theta = np.radians(angle_deg)
    s = np.array([np.cos(theta), np.sin(theta)])
    print(f"  angle {angle_deg:3d}: cos={np.dot(s, c):+.3f}  alpha={confidence_alpha(s, c):.3f}")

# ─── the three regimes ───
print("\nidentical vectors: nothing is removed (alpha = 0)")
u = normalize([2.0, 1.0])
print("  s_pure:", np.round(project_style(u, u)[0], 4))

print("orthogonal vectors: nothing to remove (projection term vanishes)")
print("  s_pure:", np.round(project_style([1.0, 0.0], [0.0, 1.0])[0], 4))

print("partial overlap: the interesting case")
s_pure, alpha = project_style([0.6, 0.8], [1.0, 0.0])
print(f"  s_r=[0.6, 0.8], c_r=[1, 0] -> alpha={alpha}, s_pure={np.round(s_pure, 6)}")
residual = np.array([0.6, 0.8]) - alpha * 0.6 * np.array([1.0, 0.0])
print(f"  residual content leftover: dot(residual, c_r) = {residual[0]:.4f} "
      f"= (1 - alpha) * cos = {(1 - alpha) * 0.6:.4f}")

# ─── anti-aligned inputs: formula vs clamp ───
print("\nanti-aligned inputs (cos = -1): the raw formula overshoots")
v = normalize([0.0, 1.0])
flipped, alpha = project_style(-v, v)
print(f"  raw alpha={alpha}: s_pure flips onto +c_r: {np.round(flipped, 4)}")
try:
    project_style(-v, v, clamp_alpha=True)
except ValueError as e:
    print(f"  clamped alpha=1 leaves a zero residual -> rejected: {e}")
