"""Compare the compiled and pure-python energy kernels.

Usage::

    python benchmarks/bench_kernels.py [--repeats 200] [--chains 4 --iters 200]

Prints per-call timings of the energy-and-gradient kernel for each backend,
the largest disagreement between them, and a short sampler run per backend.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from pregrasp import backend
from pregrasp.energy import ContactAssignment, EnergyProblem, EnergyWeights, weight_vector
from pregrasp.geometry import ObjectShape, Scene
from pregrasp.kinematics import HandConfiguration, reference_hand
from pregrasp.sampler import MalaParams, run_chain
from pregrasp.transforms import RigidTransform, random_quaternion


def two_spheres() -> Scene:
    ball = lambda x: ObjectShape("sphere", [0.025], pose=RigidTransform([x, 0.0, 0.025]))  # noqa: E731
    return Scene((ball(-0.03), ball(0.03)))


def states(model, problem, n, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        base = RigidTransform([0.0, -0.03, 0.085] + rng.normal(size=3) * 0.01, random_quaternion(rng))
        cfg = HandConfiguration(base, rng.uniform(model.lower, model.upper))
        out.append((cfg, ContactAssignment.random(problem.n_objects, 3, problem.n_points, rng)))
    return out


def time_kernel(problem, cases, wvec, repeats):
    t0 = time.perf_counter()
    for k in range(repeats):
        cfg, contacts = cases[k % len(cases)]
        problem.raw(cfg, contacts, wvec)
    return (time.perf_counter() - t0) / repeats


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=200)
    ap.add_argument("--chains", type=int, default=2)
    ap.add_argument("--iters", type=int, default=200)
    args = ap.parse_args(argv)

    model, scene = reference_hand(), two_spheres()
    wvec = weight_vector(EnergyWeights(), attract=0.5, tau=0.002)
    names = backend.available()
    problems = {name: EnergyProblem(model, scene, kernel_name=name) for name in names}
    cases = states(model, problems[names[0]], 20)
    print(f"backends: {names} (active: {backend.NAME})")

    per_call = {}
    for name, problem in problems.items():
        time_kernel(problem, cases, wvec, 5)  # warm caches
        per_call[name] = time_kernel(problem, cases, wvec, args.repeats)
        print(f"{name:>9}: energy+gradient {1e6 * per_call[name]:9.1f} us/call")
    if len(problems) == 2:
        print(f"  speedup: {per_call['python'] / per_call['compiled']:.1f}x")
        dt = dg = 0.0
        for cfg, contacts in cases:
            t1, g1, _ = problems["python"].raw(cfg, contacts, wvec)
            t2, g2, _ = problems["compiled"].raw(cfg, contacts, wvec)
            dt = max(dt, float(np.max(np.abs(t1 - t2))))
            dg = max(dg, float(np.max(np.abs(g1 - g2))))
        print(f"  max |terms diff| {dt:.1e}, max |gradient diff| {dg:.1e}")

    params = MalaParams(chains=args.chains, iterations=args.iters, seed=0)
    for name, problem in problems.items():
        t0 = time.perf_counter()
        for c in range(args.chains):
            run_chain(problem, EnergyWeights(), params, c)
        rate = args.chains * args.iters / (time.perf_counter() - t0)
        print(f"{name:>9}: sampler {rate:8.0f} iterations/s")


if __name__ == "__main__":
    main()
