#!/usr/bin/env python3
"""Independent oracle for the frozen constants in the C++ test suite.

Re-derives, from first principles / published reference algorithms, the
numbers that the tests assert verbatim. Run it and compare with the literals
in tests/ when touching the RNG, GELU, DFT or metric code.
"""

import cmath
import math

MASK = (1 << 64) - 1


def splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return state, (z ^ (z >> 31)) & MASK


def rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK


class Xoshiro256pp:
    """Reference xoshiro256++ (Blackman & Vigna), seeded via splitmix64."""

    def __init__(self, seed):
        self.s = []
        sm = seed
        for _ in range(4):
            sm, v = splitmix64(sm)
            self.s.append(v)

    def next_u64(self):
        s = self.s
        result = (rotl((s[0] + s[3]) & MASK, 23) + s[0]) & MASK
        t = (s[1] << 17) & MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = rotl(s[3], 45)
        return result

    def next_double(self):
        return (self.next_u64() >> 11) * 2.0 ** -53


def section(title):
    print(f"\n== {title} ==")


def main():
    section("xoshiro256++ with seed 42")
    rng = Xoshiro256pp(42)
    outs = [rng.next_u64() for _ in range(5)]
    for i, v in enumerate(outs):
        print(f"u64[{i}] = 0x{v:016x}ULL")
    rng = Xoshiro256pp(42)
    for i in range(3):
        print(f"double[{i}] = {rng.next_double()!r}")

    section("gelu (tanh approximation)")
    for x in (-1.0, 0.5, 3.0):
        u = math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)
        print(f"gelu({x}) = {0.5 * x * (1.0 + math.tanh(u))!r}")

    section("2x2 DFT of [[1,2],[3,4]]")
    x = [[1.0, 2.0], [3.0, 4.0]]
    for u in range(2):
        for v in range(2):
            acc = 0j
            for i in range(2):
                for j in range(2):
                    acc += x[i][j] * cmath.exp(-2j * cmath.pi * (u * i / 2 + v * j / 2))
            print(f"F[{u}][{v}] = {acc.real:+.1f} {acc.imag:+.1f}i")

    section("PSNR closed forms (peak 1)")
    print(f"uniform |err| 1/255      -> {10 * math.log10(1.0 / (1.0 / 255.0) ** 2)!r} dB")
    print(f"halving the error        -> +{20 * math.log10(2.0)!r} dB")

    section("SSIM of two constant images 0 and 1 (K1=0.01, K2=0.03, L=1)")
    c1, c2 = 0.01**2, 0.03**2
    # mu_x=0, mu_y=1, all variances 0
    val = ((2 * 0 * 1 + c1) * (0 + c2)) / ((0 + 1 + c1) * (0 + 0 + c2))
    print(f"ssim = {val!r}  (= C1/(1+C1) = {c1 / (1 + c1)!r})")

    section("softmax([0, ln 3])")
    e = [math.exp(0.0), math.exp(math.log(3.0))]
    s = sum(e)
    print([v / s for v in e])

    section("AdamW first step from zero moments (lr=1e-3, wd=0)")
    b1, b2, eps, lr = 0.9, 0.999, 1e-8, 1e-3
    for g in (1.0, 0.25):
        m = (1 - b1) * g
        v = (1 - b2) * g * g
        mh = m / (1 - b1)
        vh = v / (1 - b2)
        print(f"g={g}: update = {-lr * mh / (math.sqrt(vh) + eps)!r}  (≈ -lr for any g)")

    section("cosine schedule endpoints (lr0=5e-4, lr_min=1e-7, total=10)")
    lr0, lrm, total = 5e-4, 1e-7, 10
    for step in (0, 5, 9):
        lr = lrm + 0.5 * (lr0 - lrm) * (1 + math.cos(math.pi * step / (total - 1)))
        print(f"step {step}: {lr!r}")

    section("cosine schedule mid-run (lr0=5e-4, lr_min=1e-7, 500 steps)")
    for step in (100, 250):
        lr = lrm + 0.5 * (lr0 - lrm) * (1 + math.cos(math.pi * step / 499))
        print(f"step {step}: {lr!r}")


if __name__ == "__main__":
    main()
