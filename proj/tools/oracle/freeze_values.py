"""Arbitrary-precision reference values frozen into the C++ test suites."""
import mpmath as mp

mp.mp.dps = 60


def log_k(nu, z):
    return mp.log(mp.besselk(nu, z))


def log_green(d, sigma, r):
    nu = mp.mpf(d - 2) / 2
    kappa = mp.sqrt(2) / sigma
    return (-mp.mpf(d) / 2 * mp.log(2 * mp.pi) + mp.log(2 / mp.mpf(sigma) ** 2)
            + nu * mp.log(kappa / r) + log_k(nu, kappa * r))


print("log K_500(10)        =", mp.nstr(log_k(500, 10), 25))
print("K_1(1)/K_0(1)        =", mp.nstr(mp.besselk(1, 1) / mp.besselk(0, 1), 25))
print("K_200(1)/K_199(1)    =", mp.nstr(mp.besselk(200, 1) / mp.besselk(199, 1), 25))
print("log K_2000(1)        =", mp.nstr(log_k(2000, 1), 25))
print("log K_10000(1e-8)    =", mp.nstr(log_k(10000, mp.mpf('1e-8')), 25))
print("log K_0.5(1e5)       =", mp.nstr(log_k(mp.mpf(1) / 2, 100000), 25))
print("log K_0(3)           =", mp.nstr(log_k(0, 3), 25))
print("log K_1(0.5)         =", mp.nstr(log_k(1, mp.mpf('0.5')), 25))
print("log G d=100 s=.5 r=1 =", mp.nstr(log_green(100, mp.mpf('0.5'), 1), 25))
print("logG(1)-logG(2) d=50 =", mp.nstr(log_green(50, 1, 1) - log_green(50, 1, 2), 25))
print("1-10*1.1^-98         =", mp.nstr(1 - 10 * mp.mpf('1.1') ** -98, 25))
print("10*1.1^-198          =", mp.nstr(10 * mp.mpf('1.1') ** -198, 25))
