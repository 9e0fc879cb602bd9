"""
Cayley tables, Latin squares and isotopy
========================================

A finite group is stored as its multiplication table.  Any Latin square
can be relabelled by three independent permutations (rows, columns and
symbols); this demo shows how to tell whether such a square is secretly a
group in disguise.
"""
# %%
# The cyclic group of order 5 and a scrambled copy of it.
from cayleyflat.algebra import (
    apply_isotopy, cyclic_group, exhaustive_isotopy_check, find_nonassociative_quasigroup,
    is_associative, is_isotopic_to_group, principal_loop_isotope, random_isotopy,
    table_to_text,
)

z5 = cyclic_group(5)
print(table_to_text(z5))

iso = random_isotopy(5, seed=1)
disguised = apply_isotopy(z5, iso)
print(table_to_text(disguised))
print("associative after relabelling:", is_associative(disguised))

# %%
# Relabelling usually destroys associativity, so the raw table looks like
# a non-group.  Rebasing it on one row and one column (a principal loop
# isotope) brings back an identity element, and associativity of that loop
# settles the question.
loop = principal_loop_isotope(disguised)
print(table_to_text(loop))
print("loop associative:", is_associative(loop))
print("isotopic to a group:", is_isotopic_to_group(disguised))

# %%
# The brute-force check agrees.  It tries every row and column permutation
# and is only feasible for very small orders.
print("exhaustive check:", exhaustive_isotopy_check(disguised, z5))

# %%
# Order 5 is the smallest order with Latin squares that are not isotopic
# to any group.
q = find_nonassociative_quasigroup(5, seed=0)
print(table_to_text(q))
print("isotopic to a group:", is_isotopic_to_group(q))
print("exhaustive check against Z5:", exhaustive_isotopy_check(q, z5))
