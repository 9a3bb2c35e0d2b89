# Maximin ordering on a regular grid: how the length scales decay and
# what the nearest-previous-neighbor sets look like.
import numpy as np

from shrinktm import grid_locations, maximin_order
from shrinktm.geometry import scale_decay_slope

locs = grid_locations(30)
order = maximin_order(locs)
print("N =", order.size, " first point:", order.coords[0])

# l_k shrinks roughly like k^(-1/2) in two dimensions
k = np.arange(1, order.size + 1)
for j in (1, 10, 100, 899):
    print(f"l_{j:<4d} = {order.scales[j]:.4f}   k^-1/2 = {k[j] ** -0.5:.4f}")
print("fitted log-log slope:", round(scale_decay_slope(order.scales, 10), 3))

# early points are coarse, late points fill in the gaps
i = 500
nb = order.neighbors[i, :5]
print(f"\nlocation {i} at {order.coords[i]} conditions first on")
for j in nb:
    print(f"  #{j:<4d} {order.coords[j]}  dist {np.linalg.norm(order.coords[j] - order.coords[i]):.4f}")
