#!/usr/bin/env python3
"""Offline elliptic band-pass design for the shipped reference filter bank.

Each band is a 6th-order elliptic band-pass (3 second-order sections),
1 dB passband ripple, 30 dB stopband. Section gains are redistributed so
every section peaks at unity and the cascade peaks at 0 dB in-band, which
keeps Q6.10 intermediate values bounded.

Usage: python3 tools/design_filters.py > crates/core/data/filter_bank.toml
"""
import numpy as np
from scipy import signal

BANDS = [("alpha", 8.0, 16.0), ("beta", 16.0, 32.0), ("gamma", 32.0, 96.0)]
RATES = [1000.0, 256.0]
RIPPLE_DB = 1.0
STOP_DB = 30.0


def design(lo, hi, fs):
    sos = signal.ellip(3, RIPPLE_DB, STOP_DB, [lo, hi], btype="bandpass", output="sos", fs=fs)
    grid = np.linspace(0.01, fs / 2 - 0.01, 20000)
    for i in range(3):
        _, h = signal.sosfreqz(sos[i : i + 1], worN=grid, fs=fs)
        sos[i, :3] /= np.max(np.abs(h))
    _, h = signal.sosfreqz(sos, worN=grid, fs=fs)
    band = (grid >= lo) & (grid <= hi)
    sos[2, :3] /= np.max(np.abs(h[band]))
    return sos


def main():
    print("# Generated by tools/design_filters.py; do not edit by hand.")
    print(f"# ellip(order=3 prototype, rp={RIPPLE_DB} dB, rs={STOP_DB} dB), band-pass, 3 SOS per band")
    for fs in RATES:
        print()
        print("[[bank]]")
        print(f"fs = {fs!r}")
        print(f"ripple_db = {RIPPLE_DB!r}")
        print(f"stopband_db = {STOP_DB!r}")
        for name, lo, hi in BANDS:
            sos = design(lo, hi, fs)
            print()
            print(f"[bank.{name}]")
            print(f"lo_hz = {lo!r}")
            print(f"hi_hz = {hi!r}")
            print("sections = [")
            for s in sos:
                b0, b1, b2, a0, a1, a2 = (float(v) for v in s)
                assert abs(a0 - 1.0) < 1e-15
                print(f"  [{b0!r}, {b1!r}, {b2!r}, {a1!r}, {a2!r}],")
            print("]")


if __name__ == "__main__":
    main()
