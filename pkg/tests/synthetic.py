"""Synthetic densities with known atoms."""
import numpy as np


def smooth_field(mesh, rng, modes=3, amplitude=0.8):
    """Positive smooth density 1 + a f with f a random low-frequency Fourier sum (torus)."""
    x = mesh.vertices
    W, H = mesh.kind.width, mesh.kind.height
    f = np.zeros(mesh.n_vertices)
    for p in range(-modes, modes + 1):
        for q in range(-modes, modes + 1):
            if p == q == 0:
                continue
            a, phase = rng.standard_normal(), rng.uniform(0, 2 * np.pi)
            f += a * np.cos(2 * np.pi * (p * x[:, 0] / W + q * x[:, 1] / H) + phase)
    f /= np.abs(f).max()
    return 1.0 + amplitude * f


def bump_density(mesh, centers, weights, sigma, rng, background_amplitude=0.5):
    """Background of mass 1 - sum(weights) plus Gaussian bumps of the given masses."""
    w = mesh.vertex_weights()
    bg = smooth_field(mesh, rng, amplitude=background_amplitude)
    bg *= (1.0 - sum(weights)) / (w @ bg)
    mu = bg.copy()
    for c, m in zip(centers, weights):
        d = mesh.distances_from(c)
        g = np.exp(-0.5 * (d / sigma) ** 2)
        mu += m * g / (w @ g)
    return mu


def separated_vertices(mesh, rng, count, min_dist):
    chosen = []
    while len(chosen) < count:
        v = int(rng.integers(mesh.n_vertices))
        if all(mesh.distances_from(c)[v] >= min_dist for c in chosen):
            chosen.append(v)
    return chosen


def round_bubble_on_sphere(mesh, center, eps, mass):
    """Vertex density of a round sphere of given mass dilated by 1/eps around ``center``.

    The pullback density of z -> z / eps under stereographic coordinates is
    proportional to ((1 + t^2) / (eps^2 + t^2))^2 with t = tan(r / 2).
    """
    r = mesh.distances_from(center)
    t2 = np.tan(r / 2) ** 2
    dens = ((1 + t2) / (eps**2 + t2)) ** 2
    w = mesh.vertex_weights()
    return mass * dens / (w @ dens)
