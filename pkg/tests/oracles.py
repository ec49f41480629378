"""Independent reference implementations used to freeze derived values.

Everything here is written with plain loops over scalar indices so it shares
no vectorized code with the package.
"""

import math


def _b(beta, c, m, c2):
    return float(beta[c][m][c2])


def brute_a(beta, beta_is, K, Kp, I, m1, m2, c1, c2):
    C, M = len(beta), len(beta[0])
    bbar = sum(beta_is)
    bbar_c = [sum(_b(beta, c, m, c) for m in range(M)) for c in range(C)]
    r1 = _b(beta, c1, m1, c1) * beta_is[c1] / (bbar * bbar_c[c1])
    r2 = _b(beta, c2, m2, c2) * beta_is[c2] / (bbar * bbar_c[c2])
    bracket = 4 + 2 * (Kp - 1) + (M - 1) * (K - 1) * (I - 1) * (2 + (Kp - 1) * (C - 1))
    return 1 - r1 - r2 + r1 * r2 * bracket / (M * C * K * Kp * I)


def brute_y(beta, beta_is, K, Kp, I, tau, eta, P_t, P_is, G2, mu, Gamma, sigma_z2,
            sigma_h2, N, idealized=False):
    """Error floor Y at one round, term by term."""
    C, M = len(beta), len(beta[0])
    bbar = sum(beta_is)
    bbar_c = [sum(_b(beta, c, m, c) for m in range(M)) for c in range(C)]
    total = []
    if not idealized:
        s = 0.0
        for c1 in range(C):
            for c2 in range(C):
                for m1 in range(M):
                    for m2 in range(M):
                        s += brute_a(beta, beta_is, K, Kp, I, m1, m2, c1, c2)
        total.append(eta ** 2 * G2 * I ** 2 * tau ** 2 / (M ** 2 * C ** 2) * s)

        if C > 1:
            s = 0.0
            for c in range(C):
                for cp in range(C):
                    if cp == c:
                        continue
                    for m1 in range(M):
                        for m2 in range(M):
                            s += (beta_is[c] * beta_is[cp] * _b(beta, cp, m1, cp)
                                  * _b(beta, cp, m2, cp) / bbar_c[cp] ** 2)
            lead = 2 + (M - 1) * (C - 2) * (K - 1) * (I - 1)
            total.append(lead * eta ** 2 * I * G2 * tau ** 2
                         / (K * Kp * M ** 3 * C ** 2 * (C - 1) * bbar ** 2) * s)

        pre = eta ** 2 * G2 * I * tau ** 2 / (K * Kp * M ** 2 * C ** 2 * bbar ** 2)
        s = 0.0
        for c in range(C):
            for m in range(M):
                inner = 0.0
                for mp in range(M):
                    if mp != m:
                        inner += _b(beta, c, mp, c)
                for cp in range(C):
                    if cp != c:
                        for mp in range(M):
                            inner += _b(beta, c, mp, cp)
                s += (Kp + 1) * beta_is[c] ** 2 * _b(beta, c, m, c) / bbar_c[c] ** 2 * inner
        total.append(pre * s)

        s = 0.0
        for c in range(C):
            for cp in range(C):
                if cp == c:
                    continue
                for m in range(M):
                    inner = 0.0
                    for mp in range(M):
                        if mp != m:
                            inner += _b(beta, cp, mp, cp)
                    for cpp in range(C):
                        if cpp != cp:
                            # free index read as the outer user m
                            inner += _b(beta, cp, m, cpp)
                    s += (beta_is[c] * beta_is[cp] * _b(beta, cp, m, cp) / bbar_c[cp] ** 2
                          * inner)
        total.append(pre * s)

        s = 0.0
        for c in range(C):
            inner = 0.0
            for m in range(M):
                q = (Kp + 1) * beta_is[c] * _b(beta, c, m, c) / (P_t ** 2 * bbar_c[c] ** 2)
                for cp in range(C):
                    if cp != c:
                        q += beta_is[cp] * _b(beta, cp, m, cp) / (P_is ** 2 * bbar_c[cp] ** 2)
                inner += q
            s += beta_is[c] * (1 / P_is ** 2 + I / (K * M ** 2) * inner)
        total.append(sigma_z2 * N / (Kp * C ** 2 * sigma_h2 * bbar ** 2) * s)

    total.append((1 + mu * (1 - eta)) * eta ** 2 * I * G2 * tau * (tau - 1) * (2 * tau - 1) / 6)
    total.append(eta ** 2 * I * (tau ** 2 + tau - 1) * G2)
    total.append(2 * eta * I * (tau - 1) * Gamma)
    return math.fsum(total)


def brute_trajectory(beta, beta_is, K, Kp, I, tau, T, lr0, lr_slope, p0, p_slope, ratio,
                     G2, mu, Gamma, sigma_z2, sigma_h2, N, D0, idealized=False):
    """Step recursion of the distance bound for t = 0..T."""
    out = [D0]
    for t in range(T):
        eta = lr0 - lr_slope * t
        P_t = p0 + p_slope * t
        P_is = ratio * P_t
        x = 1 - mu * eta * I * (tau - eta * (tau - 1))
        y = brute_y(beta, beta_is, K, Kp, I, tau, eta, P_t, P_is, G2, mu, Gamma, sigma_z2,
                    sigma_h2, N, idealized)
        out.append(x * out[-1] + y)
    return out


def conventional_geometry(beta_mu_ps, path_loss_exp):
    """One cluster holding every user, its server collapsed onto the PS."""
    users = [float(v) for row in beta_mu_ps for v in row]
    beta = [[[v] for v in users]]
    return beta, [1e-6 ** (-path_loss_exp)]


def nested_list(a):
    return a.tolist() if hasattr(a, "tolist") else a
