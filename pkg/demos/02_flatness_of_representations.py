"""
Flatness of an exact factorization
==================================

Each symbol gets three ``n x n`` matrices and the table is read off from
normalized traces of their products.  For a group, the permutation
matrices of its regular representation fit every cell exactly.  The
Hessian trace of the squared loss at that point equals ``3 n^2``.
"""
# %%
import numpy as np

from cayleyflat.algebra import cyclic_group, dihedral_group
from cayleyflat.model import (
    FactorParams, ObservationSet, apply_gauge, flatness, forward_all, recon_loss,
    regular_representation, scale_gauge,
)
from cayleyflat.numerics import fd_hessian_trace, make_rng, random_orthogonal

t = dihedral_group(3)
n = t.n
full = ObservationSet.full(n)
theta = regular_representation(t)
print("reconstruction loss:", recon_loss(theta, t, full))
print("flatness:", flatness(theta, full), "  3n^2 =", 3 * n * n)

# %%
# The closed form agrees with a brute-force second difference of the loss.
z3 = cyclic_group(3)
rep3 = regular_representation(z3)
fd = fd_hessian_trace(lambda v: recon_loss(FactorParams.from_flat(v, 3), z3, ObservationSet.full(3)),
                      rep3.flat())
print("closed form:", flatness(rep3, ObservationSet.full(3)), " finite differences:", round(fd, 6))

# %%
# Orthogonal changes of basis leave both the table and the flatness
# untouched.
rng = make_rng(0)
g = apply_gauge(theta, *(random_orthogonal(n, rng) for _ in range(3)))
print("max change in forward values:", np.abs(forward_all(g) - forward_all(theta)).max())
print("flatness after gauge:", flatness(g, full))

# %%
# Rescaling one factor up and another down also preserves the table, but
# the flatness grows as c^2 + 1 + 1/c^2.
for c in (0.5, 1.0, 2.0, 4.0):
    print(f"c = {c:3.1f}   flatness = {flatness(scale_gauge(theta, c), full):8.2f}")
