"""Independent reference solutions used by the tests.

Nothing here touches the superoperator machinery of the package.
"""
import numpy as np
import scipy.integrate


def fermi(w, mu, T):
    x = np.clip((w - mu) / T, -700, 700)
    return 1 / (1 + np.exp(x))


def _fourier(g, t):
    """``int g(w) exp(i w t) dw`` over the real line for real ``g`` and ``t > 0``."""
    even = lambda w: g(w) + g(-w)
    odd = lambda w: g(w) - g(-w)
    c, _ = scipy.integrate.quad(even, 0, np.inf, weight="cos", wvar=t, limlst=200)
    s, _ = scipy.integrate.quad(odd, 0, np.inf, weight="sin", wvar=t, limlst=200)
    return c + 1j * s


def occupation_u0(eps, reservoirs, T, t, n0):
    """Spin-resolved occupation of a non-interacting level coupled to wide-band leads.

    ``reservoirs`` lists ``(Gamma_r, mu_r)``; the level amplitude decays as
    ``exp(-(i eps + Gamma/2) t)`` with ``Gamma = sum_r Gamma_r``, and every lead
    feeds the level through ``Gamma_r int dw/2pi f_r(w) |A_t(w)|^2`` with
    ``A_t(w) = (e^{-i w t} - e^{z t})/(i (eps - w) + Gamma/2)``, ``z = -i eps - Gamma/2``.
    """
    G = sum(g for g, _ in reservoirs)
    z = -1j * eps - G / 2
    out = []
    for tt in np.atleast_1d(t):
        val = np.exp(-G * tt) * n0
        if tt > 0:
            for g, mu in reservoirs:
                den = lambda w: (eps - w) ** 2 + G ** 2 / 4
                smooth, _ = scipy.integrate.quad(lambda w: fermi(w, mu, T) / den(w), -np.inf, np.inf,
                                                 epsabs=1e-13, limit=200)
                # |A|^2 = (1 + e^{-G t} - 2 Re[e^{i w t} e^{z t}]) / den
                osc = _fourier(lambda w: fermi(w, mu, T) / den(w), tt)
                val += g / (2 * np.pi) * ((1 + np.exp(-G * tt)) * smooth - 2 * np.real(np.exp(z * tt) * osc))
        out.append(val)
    return np.array(out)


def biexponential(t, lam, kappa):
    """Inverse Laplace transform of ``(s + kappa)/(s^2 + kappa s + lam^2)``."""
    disc = np.sqrt(complex(kappa ** 2 - 4 * lam ** 2))
    s1, s2 = (-kappa + disc) / 2, (-kappa - disc) / 2
    return ((s1 + kappa) * np.exp(s1 * t) - (s2 + kappa) * np.exp(s2 * t)) / (s1 - s2)
