"""Pure numpy implementation of the fused receive-and-combine kernel.

Draw order (shared with the compiled kernel, and with the materialized
draws in :mod:`whfl.channel`): for each receiver ``r``, for each antenna ``k``,
for each transmitter ``j`` then the noise slot, ``N`` standard normals for the
real parts followed by ``N`` for the imaginary parts.
"""

import numpy as np

# bounds the (antennas, transmitters+1, 2, N) normal block held in memory
_BLOCK_DOUBLES = 1 << 22


def ota_combine(gen, x, amp, own, K, noise_amp, power):
    """Matched-combined received symbols for every receiver.

    Parameters
    ----------
    gen : numpy.random.Generator
        Consumed in the canonical draw order.
    x : complex array (J, N)
        Packed transmitted symbols.
    amp : float array (R, J)
        Per-link standard deviation of each real/imaginary channel component,
        ``sqrt(beta * sigma_h2 / 2)``.
    own : bool array (R, J)
        Transmitters whose channels form the combining vector of receiver r.
    K : int
        Receive antennas per receiver.
    noise_amp : float
        ``sqrt(sigma_z2 / 2)``.
    power : float
        Transmit power multiplier.

    Returns
    -------
    complex array (R, N)
        ``(1/K) * sum_k conj(sum_own h_k) * (power * sum_j h_k x_j + z_k)``.
    """
    x = np.ascontiguousarray(x, dtype=complex)
    J, N = x.shape
    amp = np.asarray(amp, dtype=float)
    own = np.asarray(own, dtype=bool)
    R = amp.shape[0]
    out = np.zeros((R, N), dtype=complex)
    chunk = max(1, min(K, _BLOCK_DOUBLES // (2 * (J + 1) * N)))
    for r in range(R):
        acc = np.zeros(N, dtype=complex)
        a = amp[r][None, :, None]
        mask = own[r][None, :, None]
        for k0 in range(0, K, chunk):
            kc = min(chunk, K - k0)
            g = gen.standard_normal((kc, J + 1, 2, N))
            h = a * (g[:, :J, 0] + 1j * g[:, :J, 1])
            s = np.where(mask, h, 0).sum(axis=1)
            y = power * (h * x[None]).sum(axis=1)
            y += noise_amp * (g[:, J, 0] + 1j * g[:, J, 1])
            acc += (s.conj() * y).sum(axis=0)
        out[r] = acc / K
    return out
