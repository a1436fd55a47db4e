"""One-dimensional search routines: golden section and bisection."""
import math

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
INV_PHI2 = 1.0 - INV_PHI


def golden_section_min(f, a, b, tol=1e-10, max_evals=500):
    """Minimise a unimodal ``f`` on [a, b].

    Stops once the bracket width is below ``tol * max(1, |x|)``. Returns
    ``(x, f(x))`` for the best point evaluated.
    """
    a, b = min(a, b), max(a, b)
    c = a + INV_PHI2 * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    evals = 2
    while (b - a) > tol * max(1.0, abs(c)) and evals < max_evals:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = a + INV_PHI2 * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
        evals += 1
    return (c, fc) if fc <= fd else (d, fd)


def bisect_root(g, lo, hi, ftol=1e-10, max_iter=200):
    """Root of ``g`` on [lo, hi]; the caller guarantees a sign change.

    Stops when |g(x)| < ftol or the bracket collapses to machine precision.
    """
    glo = g(lo)
    if glo == 0.0:
        return lo
    x = lo
    for _ in range(max_iter):
        x = 0.5 * (lo + hi)
        gx = g(x)
        if abs(gx) < ftol or x in (lo, hi):
            return x
        if (gx < 0) == (glo < 0):
            lo, glo = x, gx
        else:
            hi = x
    return x
