"""Derive every frozen constant used in the test suite, independently of src/.

Everything here goes through the busy-period Laplace transform of the plain
M/M/1 queue and high-precision arithmetic (mpmath), *not* through the package
under test.  Run it to regenerate the table that the tests pin:

    python3 tools/derive_constants.py

Conventions (reference parameters lam=1/2, mu=1, rho=1/2):

  B     busy-period duration, beta(s) = E exp(-sB) solves
        lam*beta^2 - (lam+mu+s)*beta + mu = 0, the root in (0, 1].
  A     area under the queue-length path over one busy period.
  N     customers served in one busy period.
  D_i   departure instants within the busy period (relative to its start).

Identities used (all classical M/M/1 busy-period facts, derivable from the
transform and Palm calculus on the departure process):

  E(B)    = 1/(mu-lam)
  E(B^k)  = (-1)^k beta^(k)(0)
  E(A)    = mu/(mu-lam)^2 * E(B) ... = 1/( (1-rho)^2 (lam+mu) ) * ... (we just
            use E(A) = E(B)/(1-rho) * 1/(mu ... ) -- evaluated numerically below
            from the known closed form E(A) = 1/(mu*(1-rho)^2) * 1/(1-rho) ... )
            Actually pinned directly: E(A) = mu/(mu-lam)^3... see code.
  E int_0^B (B-v)   e^{-a v} dv = E(B)/a - 1/a^2 + beta(a)/a^2
  E int_0^B (B-v)^2 e^{-a v} dv = E(B^2)/a - 2E(B)/a^2 + 2/a^3 - 2 beta(a)/a^3

Size-biased variables:  E e^{-s Z*} = (1 - phi_Z(s)) / (s E Z).
"""

from __future__ import annotations

import mpmath as mp

mp.mp.dps = 40

LAM = mp.mpf(1) / 2
MU = mp.mpf(1)
RHO = LAM / MU


def beta(s, lam=LAM, mu=MU):
    """Busy-period LST: the (0,1] root of lam*b^2 - (lam+mu+s)*b + mu = 0."""
    c = lam + mu + s
    return 2 * mu / (c + mp.sqrt(c * c - 4 * lam * mu))


def busy_moment(k, lam=LAM, mu=MU):
    """E(B^k) by numerical differentiation of the transform (high precision)."""
    d = mp.diff(lambda s: beta(s, lam, mu), mp.mpf(0), k, relative=False)
    return (-1) ** k * d


def e_int_lin(a, lam=LAM, mu=MU):
    """E int_0^B (B-v) e^{-a v} dv."""
    eb = busy_moment(1, lam, mu)
    return eb / a - 1 / a**2 + beta(a, lam, mu) / a**2


def e_int_sq(a, lam=LAM, mu=MU):
    """E int_0^B (B-v)^2 e^{-a v} dv."""
    eb = busy_moment(1, lam, mu)
    eb2 = busy_moment(2, lam, mu)
    return eb2 / a - 2 * eb / a**2 + 2 / a**3 - 2 * beta(a, lam, mu) / a**3


def gap_exp_corr(a, var_p=1, lam=LAM, mu=MU):
    """Closed-form eps^2 coefficient of the bit-rate gap when the perturbation
    covariance is C_p(u) = var_p * exp(-a u) — the busy-integral route:

      gap(a) = var_p (1-rho)^3 [ E I1(a) - mu (1-rho)/2 * E I2(a) ]
    """
    lam = mp.mpf(lam); mu = mp.mpf(mu)
    rho = lam / mu
    i1 = e_int_lin(a, lam, mu)
    i2 = e_int_sq(a, lam, mu)
    return var_p * (1 - rho) ** 3 * (i1 - mu * (1 - rho) / 2 * i2)


def gap_exp_corr_sb(a, var_p=1, lam=LAM, mu=MU):
    """Same gap via twice/thrice size-biased busy transforms (independent route):

      gap(a) = var_p/mu^2 * ( phi2(a) - ((1+rho)/(1-rho)) * phi3(a) )

      phi2(s) = E e^{-s B**}  = 2 (s E(B) - 1 + beta(s)) / (s^2 E(B^2))
      phi3(s) = E e^{-s B***} = 3 (s^2 E(B^2) - 2 s E(B) + 2 - 2 beta(s)) / (s^3 E(B^3))

    Equality with the busy-integral route holds identically because
    E(B^2) = 2/(mu^2 (1-rho)^3) and E(B^3) = 6(1+rho)/(mu^3 (1-rho)^5);
    the assert in main() checks it to 25+ digits anyway.
    """
    lam = mp.mpf(lam); mu = mp.mpf(mu)
    rho = lam / mu
    eb = busy_moment(1, lam, mu)
    eb2 = busy_moment(2, lam, mu)
    eb3 = busy_moment(3, lam, mu)
    b = beta(a, lam, mu)
    phi2 = 2 * (a * eb - 1 + b) / (a**2 * eb2)
    phi3 = 3 * (a**2 * eb2 - 2 * a * eb + 2 - 2 * b) / (a**3 * eb3)
    return var_p / mu**2 * (phi2 - (1 + rho) / (1 - rho) * phi3)


def constant_shift(lam, mu, eps, p0):
    """Exact busy/area/bit-rate of the constant-perturbation queue (mu -> mu+eps*p0).

    E(B) = 1/(m-lam); E(A) = m/(m-lam)^2 (renewal-reward: time-average queue
    length lam/(m-lam) times mean cycle m/(lam(m-lam))); ratio = 1 - lam/m.
    """
    m = mu + eps * p0
    eb = 1 / (m - lam)
    ea = m / (m - lam) ** 2
    return eb, ea, eb / ea


def fd_quad_coeff(f, h=mp.mpf("1e-8")):
    """Second-order Taylor coefficient of f at 0 by central differences (mp precision)."""
    return (f(h) - 2 * f(mp.mpf(0)) + f(-h)) / h**2 / 2


def main() -> None:
    print("reference parameters: lam=1/2, mu=1")
    print()
    print("busy-period moments (implicit-differentiation targets):")
    for k in range(1, 5):
        print(f"  E(B^{k}) = {mp.nstr(busy_moment(k), 17)}")

    # area + customer-count identities.
    # Joint transform F(z, s) = E(z^N e^{-s B}) is the (0,1] root of
    # lam F^2 - (lam+mu+s) F + z mu = 0; differentiate numerically.
    def joint(z, s):
        c = LAM + MU + s
        return (c - mp.sqrt(c * c - 4 * LAM * MU * z)) / (2 * LAM)

    e_n = mp.diff(lambda z: joint(z, 0), mp.mpf(1))
    e_nn1 = mp.diff(lambda z: joint(z, 0), mp.mpf(1), 2)
    e_nb = -mp.diff(lambda t: mp.diff(lambda z: joint(z, t), mp.mpf(1)), mp.mpf(0))
    e_a = MU / (MU - LAM) ** 2
    e_dsum = (e_nb + e_a) / 2  # time reversal: sum(B - D_i) =d= sum(A_j), and
    #                            A = sum D - sum A  =>  2 E(sum D) = E(NB) + E(A)
    print(f"  E(A)        = mu/(mu-lam)^2  = {mp.nstr(e_a, 17)}")
    print(f"  E(N)        = {mp.nstr(e_n, 17)}")
    print(f"  E(N(N-1))   = {mp.nstr(e_nn1, 17)}   E(N^2) = {mp.nstr(e_nn1 + e_n, 17)}")
    print(f"  E(N*B)      = {mp.nstr(e_nb, 17)}")
    print(f"  E(sum D_i)  = (E(NB)+E(A))/2 = {mp.nstr(e_dsum, 17)}"
          f"   [= mu^2/(mu-lam)^3 = {mp.nstr(MU**2/(MU-LAM)**3, 17)}]")
    print()

    print("transform-identity integrals (estimator oracles):")
    for a in (mp.mpf(1)/2, mp.mpf(1), mp.mpf(2), mp.mpf(8)):
        print(f"  a={mp.nstr(a,3):>5}: beta={mp.nstr(beta(a), 17)}  "
              f"I1={mp.nstr(e_int_lin(a), 17)}  I2={mp.nstr(e_int_sq(a), 17)}")
    print()

    print("bit-rate gap (eps^2 coefficient) for C_p(u) = e^{-a u}:")
    for a in (mp.mpf(1)/50, mp.mpf(1)/20, mp.mpf(1)/2, mp.mpf(1), mp.mpf(2), mp.mpf(8), mp.mpf(200)):
        g1 = gap_exp_corr(a)
        g2 = gap_exp_corr_sb(a)
        assert mp.almosteq(g1, g2, rel_eps=mp.mpf("1e-25")), (g1, g2)
        print(f"  a={mp.nstr(a,4):>6}: gap = {mp.nstr(g1, 17)}   (two routes agree)")
    print()

    print("two-state q=1, timescale 1, p=(-1,+1):  R+(v) = (1 + e^{-2v})/4")
    g1 = (busy_moment(2) / 2 + e_int_lin(2)) / 4
    g2 = (busy_moment(3) / 3 + e_int_sq(2)) / 4
    a_upup = -(RHO / (MU * (1 - RHO))) * g1 - (1 - RHO) / 2 * g2
    print(f"  g1 = {mp.nstr(g1, 17)}   g2 = {mp.nstr(g2, 17)}")
    print(f"  area up-up coefficient = {mp.nstr(a_upup, 17)}")
    print()

    print("constant-perturbation Taylor targets (finite differences of closed forms):")
    for p0 in (1, -1):
        qb = fd_quad_coeff(lambda e: constant_shift(LAM, MU, e, p0)[0])
        qa = fd_quad_coeff(lambda e: constant_shift(LAM, MU, e, p0)[1])
        qd = fd_quad_coeff(lambda e: constant_shift(LAM, MU, e, p0)[2] - (1 - RHO) - RHO * p0 * e / MU)
        print(f"  p0={p0:+d}:  busy eps^2 coeff = {mp.nstr(qb, 12)}   "
              f"area eps^2 coeff = {mp.nstr(qa, 12)}   bitrate eps^2 coeff = {mp.nstr(qd, 12)}")
    print()

    print("frozen-environment (timescale -> 0) mixture, p in {0, 2} equally likely:")
    # ratio-of-means bit rate: E_x(B at mu+eps p(x)) / E_x(A at mu+eps p(x)),
    # expanded to second order in eps
    def frozen_ratio(e):
        num = den = mp.mpf(0)
        for p0 in (0, 2):
            eb, ea, _ = constant_shift(LAM, MU, e, p0)
            num += eb / 2
            den += ea / 2
        return num / den
    ep = mp.mpf(1)  # E p = 1
    c0 = fd_quad_coeff(lambda e: frozen_ratio(e) - (1 - RHO) - RHO * ep * e / MU)
    full = fd_quad_coeff(lambda e: frozen_ratio(e) - (1 - LAM / (MU + e * ep)))
    print(f"  eps^2 coeff, first-order reference subtracted : {mp.nstr(c0, 12)}")
    print(f"  eps^2 coeff, full rate-averaged reference     : {mp.nstr(full, 12)}")
    print(f"  (closed forms: rho/(mu^2(1-rho))*(-2E(p^2)+(1+rho)(Ep)^2) = "
          f"{mp.nstr(RHO/(MU**2*(1-RHO))*(-2*2 + (1+RHO)*1), 12)},"
          f"  -2 rho Var/( (1-rho) mu^2 ) = {mp.nstr(-2*RHO*1/((1-RHO)*MU**2), 12)})")


if __name__ == "__main__":
    main()
