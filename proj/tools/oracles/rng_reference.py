"""Independent reference for the counter-based generator.

Implements splitmix64 and the uniform/Gaussian mapping from scratch (pure
Python integer arithmetic) and prints values to freeze into tests/test_rng.cpp.
"""
import math

MASK = (1 << 64) - 1


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK
    return x ^ (x >> 31)


def u64_to_unit(x):
    return ((x >> 11) + 0.5) * (1.0 / 9007199254740992.0)


def gaussian(seed, counter):
    base = (counter * 2) & MASK
    u1 = u64_to_unit(splitmix64(seed ^ ((base * 0x9E3779B97F4A7C15 + 0x243F6A8885A308D3) & MASK)))
    u2 = u64_to_unit(splitmix64(seed ^ (((base + 1) * 0x9E3779B97F4A7C15 + 0x243F6A8885A308D3) & MASK)))
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


if __name__ == "__main__":
    print("splitmix64(0) =", hex(splitmix64(0)))
    print("splitmix64(1) =", hex(splitmix64(1)))
    print("splitmix64(0xdeadbeef) =", hex(splitmix64(0xDEADBEEF)))
    for seed in (42, 12345):
        vals = [gaussian(seed, c) for c in range(4)]
        print(f"gaussian(seed={seed}, c=0..3) =", ", ".join(f"{v!r}" for v in vals))
    n = 200000
    s = m2 = 0.0
    for c in range(n):
        g = gaussian(7, c)
        s += g
        m2 += g * g
    print(f"moments over {n}: mean={s/n:.6f} var={m2/n - (s/n)**2:.6f}")
