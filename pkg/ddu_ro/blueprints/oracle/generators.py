"""Seeded desk-scale facility instances with enumerable X, U_d and Y_d.

Two customers are served from two or three candidate sites. Every variant
keeps the first stage binary so the enumeration oracle can walk X.
"""
import numpy as np

from . import oracle_bp
from ddu_ro.models import DduSet, FirstStageSet, ProblemInstance, RecourseSpec

UNCERTAINTY_KINDS = ('integer', 'vertex', 'box', 'mixed')
CUSTOMERS = 2


def _demand_rows(uncertainty, n_u, m_u):
    """E_c, E_d on the demand rows: demand i is u_c,i or u_d,i with E = -1."""
    E_c = np.zeros((CUSTOMERS, n_u))
    E_d = np.zeros((CUSTOMERS, m_u))
    if uncertainty == 'integer':
        E_d[:, :] = -np.eye(CUSTOMERS)
    else:
        E_c[:, :] = -np.eye(CUSTOMERS)
    return E_c, E_d


def _uncertainty(uncertainty, rng, J):
    base = rng.integers(1, 4, CUSTOMERS).astype(float)
    g = rng.integers(0, 3, (CUSTOMERS, J)).astype(float)
    if uncertainty == 'integer':
        # u_d,i <= base_i + g_i x, and a decision-dependent coefficient (1 + x_0) u_d,1 <= 6
        F_d0 = np.vstack([np.eye(CUSTOMERS), [[0.0, 1.0]]])
        F_d_lin = np.zeros((J, 3, CUSTOMERS))
        F_d_lin[0, 2, 1] = 1.0
        ddu = DduSet(0, CUSTOMERS, np.zeros((3, 0)), F_d0, F_d_lin, np.vstack([g, np.zeros(J)]),
                     np.append(base, 6.0), np.tile([0.0, 7.0], (CUSTOMERS, 1)))
        peak = np.minimum(7.0, base + g.sum(axis=1))
    elif uncertainty == 'vertex':
        surge = rng.integers(1, 3, CUSTOMERS).astype(float)
        cap = float(base.sum() + 1.0)
        F_c = np.vstack([np.eye(CUSTOMERS), np.ones((1, CUSTOMERS))])
        F_d0 = np.vstack([-np.diag(surge), np.zeros((1, CUSTOMERS))])
        G = np.vstack([g, np.ones((1, J))])
        ddu = DduSet(CUSTOMERS, CUSTOMERS, F_c, F_d0, np.zeros((0, 3, CUSTOMERS)), G, np.append(base, cap),
                     np.tile([0.0, 1.0], (CUSTOMERS, 1)), np.ones((1, CUSTOMERS)), np.array([1.0]))
        peak = np.minimum(base + surge + g.sum(axis=1), cap + J)
    elif uncertainty == 'box':
        ddu = DduSet(CUSTOMERS, 0, np.eye(CUSTOMERS), np.zeros((CUSTOMERS, 0)), np.zeros((0, CUSTOMERS, 0)),
                     g, base, np.zeros((0, 2)))
        peak = base + g.sum(axis=1)
    elif uncertainty == 'mixed':
        # u_c = a u_d + e x + base pinned by two rows; u_d,i <= 1 + g_i x
        a = rng.integers(1, 3, CUSTOMERS).astype(float)
        e = rng.integers(0, 2, (CUSTOMERS, J)).astype(float)
        eye = np.eye(CUSTOMERS)
        F_c = np.vstack([eye, -eye, np.zeros((CUSTOMERS, CUSTOMERS))])
        F_d0 = np.vstack([-np.diag(a), np.diag(a), eye])
        G = np.vstack([e, -e, g])
        h = np.concatenate([base, -base, np.ones(CUSTOMERS)])
        ddu = DduSet(CUSTOMERS, CUSTOMERS, F_c, F_d0, np.zeros((0, 3 * CUSTOMERS, CUSTOMERS)), G, h,
                     np.tile([0.0, 3.0], (CUSTOMERS, 1)), np.ones((1, CUSTOMERS)), np.array([4.0]))
        peak = base + a * np.minimum(3.0, 1.0 + g.sum(axis=1)) + e.sum(axis=1)
    else:
        raise ValueError(f"unknown uncertainty kind '{uncertainty}'")
    return ddu, peak


@oracle_bp.generator('tiny')
def tiny_facility(seed, uncertainty='integer', recourse='lp', relatively_complete=True, n_sites=None):
    """A 2-customer facility instance; recourse='mip' adds binary temporary capacity per site."""
    rng = np.random.default_rng(seed)
    J = n_sites or int(rng.integers(2, 4))
    I = CUSTOMERS
    ddu, peak = _uncertainty(uncertainty, rng, J)
    n_u, m_u = ddu.n_u, ddu.m_u

    f = rng.uniform(2.0, 6.0, J).round(2)
    K = rng.integers(3, 7, J).astype(float)
    if K.sum() < peak.sum():
        K = np.ceil(K * peak.sum() / K.sum())
    c = rng.uniform(1.0, 5.0, (I, J)).round(2)

    n_flow = I * J
    n_y = n_flow + (I if relatively_complete else 0)
    B2c = np.zeros((I + J, n_y))
    for i in range(I):
        B2c[i, i * J:(i + 1) * J] = 1.0
        for j in range(J):
            B2c[I + j, i * J + j] = -1.0
    c2c = c.reshape(-1)
    if relatively_complete:
        B2c[:I, n_flow:] = np.eye(I)
        c2c = np.append(c2c, rng.uniform(15.0, 25.0, I).round(2))
    B1 = np.zeros((I + J, J))
    B1[I:, :] = np.diag(K)
    E_c, E_d = _demand_rows(uncertainty, n_u, m_u)
    E_c = np.vstack([E_c, np.zeros((J, n_u))])
    E_d = np.vstack([E_d, np.zeros((J, m_u))])

    if recourse == 'mip':
        temp = rng.integers(2, 5, J).astype(float)
        B2d = np.vstack([np.zeros((I, J)), np.diag(temp)])
        c2d = rng.uniform(1.0, 4.0, J).round(2)
        y_d_bounds = np.tile([0.0, 1.0], (J, 1))
    else:
        B2d, c2d, y_d_bounds = np.zeros((I + J, 0)), np.zeros(0), np.zeros((0, 2))

    rec = RecourseSpec(n_y, B2d.shape[1], B1, B2c, B2d, E_c, E_d, np.zeros(I + J), c2c, c2d, y_d_bounds)
    first_stage = FirstStageSet(0, J, np.ones((1, J)), np.ones(1), np.tile([0.0, 1.0], (J, 1)))
    meta = {'name': f"tiny-{uncertainty}-{recourse}-{seed}", 'provenance': 'generator:tiny',
            'seed': int(seed), 'uncertainty': uncertainty, 'recourse': recourse,
            'relatively_complete': bool(relatively_complete)}
    return ProblemInstance(first_stage, ddu, rec, f, meta)


def pin_upper_corner(instance):
    """Twin of a box instance whose continuous slice is its upper corner.

    Recourse cost is nondecreasing in demand, so both instances share w*; the
    twin has singleton slices the enumeration oracle can evaluate with MIP recourse.
    """
    ddu = instance.ddu
    if ddu.m_u:
        raise ValueError("pinning is defined for polytope (m_u = 0) box instances only")
    pinned = DduSet(ddu.n_u, 0, np.vstack([ddu.F_c, -ddu.F_c]), np.zeros((2 * ddu.mu_u, 0)),
                    np.zeros((0, 2 * ddu.mu_u, 0)), np.vstack([ddu.G, -ddu.G]),
                    np.concatenate([ddu.h, -ddu.h]), np.zeros((0, 2)))
    return ProblemInstance(instance.first_stage, pinned, instance.recourse, instance.c1,
                           {**instance.meta, 'name': f"{instance.name}-pinned"})
