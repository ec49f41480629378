"""Time the compiled combining kernel against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeats 3]

Shapes default to one cluster hop of the MNIST setup (4 servers, 100
antennas, 20 users, N = 3925).
"""

import time

import click
import numpy as np

from whfl import _kernels_py, kernels
from whfl.numerics import RngStream


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


@click.command()
@click.option("--receivers", default=4)
@click.option("--antennas", default=100)
@click.option("--transmitters", default=20)
@click.option("--symbols", default=3925)
@click.option("--repeats", default=3)
def main(receivers, antennas, transmitters, symbols, repeats):
    g = np.random.default_rng(0)
    x = g.standard_normal((transmitters, symbols)) + 1j * g.standard_normal((transmitters, symbols))
    amp = g.uniform(0.5, 2.0, (receivers, transmitters))
    own = np.zeros((receivers, transmitters), dtype=bool)
    per = max(transmitters // receivers, 1)
    for r in range(receivers):
        own[r, r * per:(r + 1) * per] = True

    def run(mod):
        return mod.ota_combine(RngStream(1).generator(), x, amp, own, antennas, 2.2, 1.0)

    t_py, y_py = _time(lambda: run(_kernels_py), repeats)
    click.echo(f"python   {t_py:8.3f} s")
    if kernels.BACKEND != "cython":
        click.echo("compiled core not available")
        return
    from whfl import _kernels
    t_cy, y_cy = _time(lambda: run(_kernels), repeats)
    rel = np.max(np.abs(y_cy - y_py)) / np.max(np.abs(y_py))
    click.echo(f"cython   {t_cy:8.3f} s")
    click.echo(f"speedup  {t_py / t_cy:8.2f}x   max relative difference {rel:.1e}")


if __name__ == "__main__":
    main()
