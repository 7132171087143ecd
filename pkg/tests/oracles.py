"""Independent reference computations used to freeze expected values.

Nothing here imports the package; every routine is a plain loop or a
quadrature written from the textbook definition.
"""
import math

import numpy as np

GAUSS = (0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0))


def q1_shape(xi, eta):
    """Bilinear shapes on [0,1]^2 in corner order (0,0), (1,0), (0,1), (1,1), with gradients."""
    N = np.array([(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta])
    dN = np.array([[-(1 - eta), -(1 - xi)], [1 - eta, -xi], [-eta, 1 - xi], [eta, xi]])
    return N, dN


def q1_element(h):
    """Element mass and stiffness of a square of side h by 2x2 Gauss quadrature."""
    Me = np.zeros((4, 4))
    Ke = np.zeros((4, 4))
    for xi in GAUSS:
        for eta in GAUSS:
            N, dN = q1_shape(xi, eta)
            Me += 0.25 * np.outer(N, N) * h * h
            Ke += 0.25 * dN @ dN.T  # gradients scale by 1/h, area by h^2
    return Me, Ke


def loop_assemble(nx, cell_weight, kind):
    """Dense full-grid matrix, one Python loop over cells."""
    h = 1.0 / nx
    Me, Ke = q1_element(h)
    E = Me if kind == "mass" else Ke
    n = (nx + 1) ** 2
    K = np.zeros((n, n))
    for cy in range(nx):
        for cx in range(nx):
            nodes = [cy * (nx + 1) + cx, cy * (nx + 1) + cx + 1,
                     (cy + 1) * (nx + 1) + cx, (cy + 1) * (nx + 1) + cx + 1]
            w = cell_weight(cx, cy, nodes)
            for a in range(4):
                for b in range(4):
                    K[nodes[a], nodes[b]] += w * E[a, b]
    return K


def interior_index(nx):
    return [iy * (nx + 1) + ix for iy in range(1, nx) for ix in range(1, nx)]


def zeta_tail(p, n, terms=200000):
    """sum_{k>n} k^-p by direct summation plus an Euler-Maclaurin remainder."""
    k = np.arange(n + 1, n + 1 + terms, dtype=float)
    s = float(np.sum(k[::-1] ** -p))
    K = n + terms
    return s + K ** (1 - p) / (p - 1) - 0.5 * K ** -p


def scalar_pc_step(u, dt, m, a, s, f, w):
    """Predictor-corrector for m u' + a u + s u^3 = f + w with frozen-cube linearisation."""
    rhs = m * u + dt * (f + w)
    pred = rhs / (m + dt * a + dt * s * u ** 3)
    return rhs / (m + dt * a + dt * s * pred ** 3)
