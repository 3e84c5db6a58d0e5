"""Compare the compiled and pure-Python kernel backends.

Times DTW over square cost matrices and a GRU forward/backward pass over a
sequence, checks that both backends return the same numbers, and prints one
row per case. ``--json FILE`` also writes the rows.

    python benchmarks/bench_kernels.py --repeat 5
"""
import argparse
import json
import sys
import timeit

import numpy as np

from accent_tts import kernels


def dtw_case(n, seed=0):
    cost = np.random.default_rng(seed).random((n, n))
    return lambda k: k.dtw_path(cost)


def gru_case(T, H, seed=0):
    r = np.random.default_rng(seed)
    xproj = r.normal(size=(T, 3 * H))
    U = r.normal(size=(H, 3 * H)) * 0.3
    b = r.normal(size=3 * H)
    h0 = np.zeros(H)
    dhs = r.normal(size=(T, H))

    def run(k):
        hs, cache = k.gru_forward(xproj, U, b, h0)
        return (hs,) + tuple(k.gru_backward(dhs, h0, hs, cache, U))

    return run


def _flat(out):
    parts = out if isinstance(out, tuple) else (out,)
    return [np.asarray(p, dtype=float).ravel() for p in parts]


def bench(name, fn, backends, repeat):
    outs = {b: _flat(fn(k)) for b, k in backends.items()}
    ref = outs["python"]
    agree = all(len(o) == len(ref) and all(np.allclose(x, y, atol=1e-10) for x, y in zip(o, ref))
                for o in outs.values())
    row = {"case": name, "agree": agree}
    for b, k in backends.items():
        timer = timeit.Timer(lambda k=k: fn(k))
        number, _ = timer.autorange()
        row[b] = min(timer.repeat(repeat, number)) / number
    if "compiled" in row:
        row["speedup"] = row["python"] / row["compiled"]
    return row


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--dtw-sizes", default="50,100,200")
    p.add_argument("--gru", default="100x32,200x64", help="comma-separated TxH sequence shapes")
    p.add_argument("--json", help="write results to this file")
    args = p.parse_args(argv)

    backends = {"python": kernels.get_backend("python")}
    try:
        backends["compiled"] = kernels.get_backend("compiled")
    except ImportError:
        print("compiled kernels unavailable; timing the Python fallback only", file=sys.stderr)

    cases = [(f"dtw {n}x{n}", dtw_case(int(n))) for n in args.dtw_sizes.split(",")]
    for shape in args.gru.split(","):
        T, H = (int(v) for v in shape.split("x"))
        cases.append((f"gru T={T} H={H}", gru_case(T, H)))

    rows = [bench(name, fn, backends, args.repeat) for name, fn in cases]
    print(f"{'case':<20}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}  agree")
    for r in rows:
        comp = f"{1e3 * r['compiled']:>14.3f}" if "compiled" in r else f"{'-':>14}"
        sp = f"{r['speedup']:>9.1f}x" if "speedup" in r else f"{'-':>10}"
        print(f"{r['case']:<20}{1e3 * r['python']:>12.3f}{comp}{sp}  {r['agree']}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r["agree"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
