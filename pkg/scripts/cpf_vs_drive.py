"""Deterministic-scheme CPF C(x=0, y=+1, z=0) at tau = t, sigma_x readout.

The system starts maximally mixed and the environment in its stationary state.
"""

import argparse
import csv
import os

import numpy as np

from bystander.cli import fmt
from bystander.cpf import Measurement, cpf_deterministic, extract_decomposition
from bystander.models import SX, FluorDephasingParams, fluor_cpf_closed_form, fluor_model, fluor_stationary_env


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/cpf_vs_drive.csv")
    ap.add_argument("--omegas", type=float, nargs="+", default=[0.1, 0.25, 1.0, 10.0])
    ap.add_argument("--tmax", type=float, default=10.0)
    ap.add_argument("--num", type=int, default=501)
    args = ap.parse_args()

    times = np.linspace(0.0, args.tmax, args.num)
    mx = Measurement.from_operator(SX)
    columns = {"time[1/gamma]": times}
    for w in args.omegas:
        p = FluorDephasingParams(1.0, w)
        p.rho0e = fluor_stationary_env(p)
        m = fluor_model(p, np.eye(2) / 2)
        dec = extract_decomposition(m)
        columns[f"cpf_omega_{w}[1]"] = [cpf_deterministic(dec, [mx] * 3, t, t, 0, m.rho0_s, p.rho0e).value for t in times]
        columns[f"cpf_closed_omega_{w}[1]"] = [fluor_cpf_closed_form(p, t, t, 1, 0.0) for t in times]

    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for row in zip(*columns.values()):
            wr.writerow(fmt(v) for v in row)
    print(args.out)


if __name__ == "__main__":
    main()
