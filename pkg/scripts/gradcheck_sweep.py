"""Run the gradient audit from several base seeds and report the worst error per component."""
import argparse
import time

from lobhorizon.gradcheck import GradcheckConfig, run_gradcheck


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 10, 20, 30, 40])
    args = ap.parse_args()
    worst = {}
    for seed in args.seeds:
        t0 = time.perf_counter()
        report = run_gradcheck(GradcheckConfig(), seed)
        for r in report.results:
            if r.max_error >= worst.get(r.name, (-1.0,))[0]:
                worst[r.name] = (r.max_error, r.tolerance, f"base {seed}, {r.worst_leaf}")
        print(f"base seed {seed}: {'pass' if report.passed else 'FAIL'} in {time.perf_counter() - t0:.0f}s",
              flush=True)
    for name, (err, tol, where) in worst.items():
        print(f"{name:<22} {err:.2e} / {tol:.0e}  {where}")


if __name__ == "__main__":
    main()
