"""Independent oracles used to freeze expected values before the build.

The Bessel oracle evaluates the ascending series for J_1 and Y_1 in
50-digit arithmetic (mpmath used only for the big-number type); it is
deliberately separate from the library path, which goes through scipy.
"""

import mpmath as mp


def bessel_j1_series(z, dps: int = 50, terms: int = 200):
    """J_1(z) = sum_m (-1)^m (z/2)^(2m+1) / (m! (m+1)!)."""
    with mp.workdps(dps):
        z = mp.mpf(z)
        half = z / 2
        term = half  # m = 0
        total = term
        for m in range(1, terms):
            term *= -(half * half) / (mp.mpf(m) * (m + 1))
            total += term
            if abs(term) < mp.mpf(10) ** (-dps) * abs(total):
                break
        return total


def bessel_y1_series(z, dps: int = 50, terms: int = 200):
    """Y_1(z) by the ascending series with digamma weights.

    Y_1 = -(2/(pi z)) + (2/pi) ln(z/2) J_1(z)
          - (1/pi)(z/2) sum_k [psi(k+1) + psi(k+2)] (-z^2/4)^k / (k! (k+1)!)
    """
    with mp.workdps(dps):
        z = mp.mpf(z)
        half = z / 2
        gamma = mp.euler
        psi1 = -gamma  # psi(1)
        psi2 = 1 - gamma  # psi(2)
        coef = half  # (z/2)^(2k+1) / (k! (k+1)!) at k = 0
        total = (psi1 + psi2) * coef
        for k in range(1, terms):
            coef *= -(half * half) / (mp.mpf(k) * (k + 1))
            psi1 += mp.mpf(1) / k
            psi2 += mp.mpf(1) / (k + 1)
            term = (psi1 + psi2) * coef
            total += term
            if abs(term) < mp.mpf(10) ** (-dps) * abs(total):
                break
        return -2 / (mp.pi * z) + (2 / mp.pi) * mp.log(half) * bessel_j1_series(z, dps, terms) - total / mp.pi


def hankel1_1_series(z, dps: int = 50):
    j = bessel_j1_series(z, dps)
    y = bessel_y1_series(z, dps)
    return complex(j), complex(y)


if __name__ == "__main__":
    for z in (0.5, 1.0, 5.0, 12.0):
        j, y = hankel1_1_series(z)
        print(f"z = {z}: J1 = {j.real!r}  Y1 = {y.real!r}")
