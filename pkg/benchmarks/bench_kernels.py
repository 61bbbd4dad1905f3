"""Compare the compiled kernels with the pure Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times each kernel on representative inputs, then an end-to-end stream replay
under each backend (in a child interpreter, since the backend is picked at
import time).
"""

import argparse
import json
import math
import os
import random
import subprocess
import sys
import timeit
from array import array

from ma4bdi import _kernels_py

try:
    from ma4bdi import _kernels as _kernels_c
except ImportError:
    _kernels_c = None

REPLAY = r"""
import json, sys, time
sys.path.insert(0, sys.argv[1])
from helpers import roads, synthetic_ledger, synthetic_scenario
from ma4bdi import kernels
from ma4bdi.config import load_config
from ma4bdi.extraction import load_corpus, train_text_model
from ma4bdi.speed import Snapshot, SpeedLayer
model = train_text_model(load_corpus(load_config().path("corpus")))
obs = synthetic_scenario(int(sys.argv[2]), seed=1)
layer = SpeedLayer(Snapshot(model, synthetic_ledger()), roads())
start = time.perf_counter()
for _ in layer.replay(obs):
    pass
print(json.dumps({"backend": kernels.BACKEND, "seconds": time.perf_counter() - start}))
"""


def cases(rng):
    classes, width = 3, 2000
    prior = array("d", [math.log(1 / 3)] * classes)
    lik = array("d", [math.log(rng.random() + 1e-6) for _ in range(classes * width)])
    ids = array("q", [rng.randrange(width) for _ in range(40)])
    lats = array("d", [41.8 + rng.random() * 0.2 for _ in range(5000)])
    lons = array("d", [-87.7 + rng.random() * 0.2 for _ in range(5000)])
    secs = array("q", sorted(rng.randrange(86_400) for _ in range(5000)))
    return {
        "nb_log_scores (40 tokens, 3x2000)": lambda m: m.nb_log_scores(ids, prior, lik, width),
        "nearest_point (5000 roads)": lambda m: m.nearest_point(41.9, -87.6, lats, lons),
        "chain_labels (5000 times)": lambda m: m.chain_labels(secs, 900),
    }


def best_of(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def replay(backend_env, n):
    env = {k: v for k, v in os.environ.items() if k != "MA4BDI_PURE_PYTHON"}
    env.update(backend_env)
    tests_dir = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "tests")
    out = subprocess.run([sys.executable, "-c", REPLAY, tests_dir, str(n)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(out.stdout)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--records", type=int, default=5000)
    args = parser.parse_args(argv)

    if _kernels_c is None:
        print("compiled kernels not built; only the Python fallback is available")
    print(f"{'kernel':<36}{'python':>12}{'compiled':>12}{'speedup':>10}")
    for name, fn in cases(random.Random(0)).items():
        py = best_of(lambda: fn(_kernels_py), args.repeat)
        if _kernels_c is None:
            print(f"{name:<36}{py * 1e6:>10.1f}us{'-':>12}{'-':>10}")
            continue
        assert fn(_kernels_py) == fn(_kernels_c)
        c = best_of(lambda: fn(_kernels_c), args.repeat)
        print(f"{name:<36}{py * 1e6:>10.1f}us{c * 1e6:>10.1f}us{py / c:>9.1f}x")

    print(f"\nstream replay of {args.records} records")
    for label, env in (("python", {"MA4BDI_PURE_PYTHON": "1"}), ("default", {})):
        result = replay(env, args.records)
        per = result["seconds"] / args.records * 1e6
        print(f"  {label:<8} backend={result['backend']:<7} {result['seconds']:.3f} s  ({per:.1f} us/record)")


if __name__ == "__main__":
    main()
