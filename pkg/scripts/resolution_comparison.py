#!/usr/bin/env python3
"""Compare the three reconstruction paths on a simulated point source.

Simulates a noisy dataset with the default instrument settings, reconstructs
it by channel summation, adaptive pixel reassignment, and multi-image
deconvolution, then reports the fitted FWHM of each image and writes their
radial spectra to CSV.

Usage: python scripts/resolution_comparison.py [--photons 1e4] [--seed 11]
       [--out-dir results]
"""
import argparse
import csv
from pathlib import Path

import ismkit as ik


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--photons", type=float, default=1e4)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--iterations", type=int, default=5)
    ap.add_argument("--step-nm", type=float, default=20.0)
    ap.add_argument("--size", type=int, default=96)
    ap.add_argument("--out-dir", default="results")
    args = ap.parse_args()

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    config = ik.OpticalConfig(lambda_exc_nm=635, lambda_em_nm=660,
                              numerical_aperture=1.4, refractive_index=1.5,
                              magnification=450)
    grid = ik.ScanGrid(args.size, args.size, args.step_nm, args.step_nm)
    stack = ik.psf_stack(config, grid)
    phantom = ik.make_phantom("point_sources", grid, positions_nm=[(0.0, 0.0)],
                              photons=args.photons)
    dataset = ik.add_poisson(ik.forward(phantom, stack), seed=args.seed)

    images = {
        "sum": ik.sum_image(dataset).image,
        "apr": ik.apr(dataset, ik.estimate_shifts(dataset)).image,
        "deconvolved": ik.rl_deconvolve(dataset, stack, args.iterations).image,
    }

    print(f"photon budget {args.photons:g}, seed {args.seed}, "
          f"{args.iterations} deconvolution iterations")
    spectra = {}
    for name, image in images.items():
        fit = ik.fit_gaussian_profile(image, axis="x", step_nm=args.step_nm)
        spectra[name] = ik.radial_spectrum(image, args.step_nm,
                                           assume_centered=True)
        print(f"  {name:12s} FWHM {fit.fwhm_nm:7.1f} +- {fit.fwhm_err_nm:.1f} nm")

    spec_path = out_dir / "radial_spectra.csv"
    with open(spec_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k_per_nm", "sum", "apr", "deconvolved"])
        for i, k in enumerate(spectra["sum"].k_bins):
            writer.writerow([f"{k:.8g}"] + [f"{spectra[m].values[i]:.8g}"
                                            for m in ("sum", "apr", "deconvolved")])
    print(f"radial spectra written to {spec_path}")


if __name__ == "__main__":
    main()
