"""Random polyhedron generators shared by the LP tests and acceptance run."""

import numpy as np

from bec.lpcore import Polyhedron


def random_bounded_polyhedron(rng, nv):
    """A bounded, feasible polyhedron with a known interior-ish point.

    Low dimensions get a box cage with assorted extra cuts; higher ones
    get a simplex cage so vertex enumeration stays cheap.
    """
    rows = []
    rhs = []
    if nv >= 6:
        mask = np.ones(nv, dtype=bool)
        z = rng.uniform(0.05, 0.4, nv)
        rows.append(np.ones(nv))
        rhs.append(float(z.sum()) + rng.uniform(0.5, 2.0))
    else:
        mask = rng.random(nv) < 0.5
        z = rng.uniform(-1.0, 1.0, nv)
        z[mask] = np.abs(z[mask]) + 0.1
        for i in range(nv):
            e = np.zeros(nv)
            e[i] = 1.0
            rows.append(e.copy())
            rhs.append(float(z[i]) + rng.uniform(0.2, 1.5))
            if not mask[i]:
                rows.append(-e)
                rhs.append(-float(z[i]) + rng.uniform(0.2, 1.5))
    for _ in range(int(rng.integers(0, 3))):
        a = rng.normal(size=nv)
        rows.append(a)
        rhs.append(float(a @ z) + rng.uniform(0.05, 0.8))
    eq = None
    if nv >= 3 and rng.random() < 0.35:
        a = rng.normal(size=nv)
        eq = (a[None, :], np.array([float(a @ z)]))
    poly = Polyhedron(
        num_vars=nv,
        eq=eq,
        ineq=(np.vstack(rows), np.array(rhs)),
        nonneg_mask=tuple(mask),
    )
    return poly, z


def random_homogeneous_cone(rng, nv, squeeze):
    """A homogeneous system; squeeze=True stacks rows until {0} is likely."""
    mask = tuple(bool(v) for v in rng.random(nv) < 0.7)
    neq = int(rng.integers(1, nv)) if squeeze else int(rng.integers(0, 2))
    nin = int(rng.integers(1, nv + 1)) if squeeze else int(rng.integers(0, 3))
    eq = (rng.normal(size=(neq, nv)), np.zeros(neq)) if neq else None
    ineq = (rng.normal(size=(nin, nv)), np.zeros(nin)) if nin else None
    return Polyhedron(num_vars=nv, eq=eq, ineq=ineq, nonneg_mask=mask)


def cone_brute_force_feasible_ray(poly, rng, num_rays=4096, tol=1e-7):
    """Search for a nonzero feasible ray by projected random sampling.

    Returns a feasible nonzero ray or None.  Rays are projected onto the
    null space of the equality rows first, so equality-constrained cones
    get a fair shot.
    """
    nv = poly.num_vars
    Aeq, _ = poly.eq
    if Aeq.shape[0]:
        _, s, vt = np.linalg.svd(Aeq, full_matrices=True)
        rank = int(np.sum(s > 1e-12 * max(1.0, s[0] if s.size else 1.0)))
        basis = vt[rank:].T
        if basis.shape[1] == 0:
            return None
    else:
        basis = np.eye(nv)
    raw = rng.normal(size=(num_rays, basis.shape[1])) @ basis.T
    for row in raw:
        for cand in (row, -row):
            nrm = float(np.sum(np.abs(cand)))
            if nrm < 1e-9:
                continue
            cand = cand / nrm
            if poly.contains(cand, tol):
                return cand
    return None
