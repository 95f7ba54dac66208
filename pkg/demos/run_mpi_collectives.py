"""Run every MPI-style collective on the cluster simulator and print the
outputs next to the sequential reference."""

import pprint

from latticeflow.patterns import mpi_collectives, run_workload


def main():
    pat = mpi_collectives()
    workload = pat.workload(seed=4)
    cluster = run_workload(pat.program, workload, seed=4)
    got = pat.observe(cluster)
    want = pat.oracle(workload)
    for op in sorted(got):
        status = "ok" if got[op] == want[op] else "MISMATCH"
        print(f"--- {op} [{status}]")
        pprint.pprint(got[op])
    print(f"quiesced at tick {cluster.tick}")


if __name__ == "__main__":
    main()
