"""Canonical decay rate of the reduced fluorescence dynamics for several drives.

Writes one CSV with the engine rate (from the numerically inverted propagator)
and the closed form; "div" marks grid points where the generator is singular.
"""

import argparse
import csv
import os
import warnings

import numpy as np

from bystander.cli import fmt
from bystander.lindblad import canonical_rates, time_local_generator
from bystander.models import FluorDephasingParams, fluor_canonical_rate, fluor_model, fluor_stationary_env
from bystander.qrt import system_propagator_family


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/rates_vs_drive.csv")
    ap.add_argument("--omegas", type=float, nargs="+", default=[0.1, 0.25, 1.0, 10.0])
    ap.add_argument("--tmax", type=float, default=20.0)
    ap.add_argument("--num", type=int, default=2001)
    args = ap.parse_args()

    times = np.linspace(0.0, args.tmax, args.num)
    columns = {"time[1/gamma]": times}
    for w in args.omegas:
        p = FluorDephasingParams(1.0, w)
        p.rho0e = fluor_stationary_env(p)
        fam = system_propagator_family(fluor_model(p).generator(), (2, 2), p.rho0e, times)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            gens = time_local_generator(fam)
        columns[f"rate_omega_{w}[gamma]"] = [None if g is None else canonical_rates(g)[0] for g in gens]
        columns[f"rate_closed_omega_{w}[gamma]"] = fluor_canonical_rate(p, times)

    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for row in zip(*columns.values()):
            wr.writerow(fmt(v) for v in row)
    print(args.out)


if __name__ == "__main__":
    main()
