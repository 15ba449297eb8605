"""Command-line front end: one subcommand per pipeline stage.

All lengths on the command line are nanometers. Every output container
records the resolved command configuration in its provenance metadata, so
runs with a fixed --seed are reproducible byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from contextlib import nullcontext

import numpy as np
import scipy.fft as _fft

from . import container as cont
from .analysis import fit_gaussian_profile, radial_spectrum
from .optics import OpticalConfig, ScanGrid, psf_stack, shift_vectors_from_psf
from .reconstruct import apr, estimate_shifts, rl_deconvolve, sum_image
from .reconstruct import fingerprint_from_data
from .resample import check_sampling_condition, downsample, upsampled_reconstruct
from .simulate import BackgroundModel, add_poisson, forward, forward_with_background
from .simulate import make_phantom


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_optics_args(parser):
    g = parser.add_argument_group("optics")
    g.add_argument("--lambda-exc-nm", type=float, default=635.0)
    g.add_argument("--lambda-em-nm", type=float, default=660.0)
    g.add_argument("--na", type=float, default=1.4)
    g.add_argument("--refractive-index", type=float, default=1.5)
    g.add_argument("--magnification", type=float, default=450.0)
    g.add_argument("--array-side", type=int, default=5)
    g.add_argument("--element-size-nm", type=float, default=50_000.0)
    g.add_argument("--element-pitch-nm", type=float, default=75_000.0)
    g.add_argument("--psf-model", choices=("gaussian", "airy_scalar"),
                   default="gaussian")


def _add_grid_args(parser):
    g = parser.add_argument_group("scan grid")
    g.add_argument("--size", type=int, default=64, help="pixels per axis")
    g.add_argument("--step-nm", type=float, default=80.0, help="scan step")


def _config_from(args) -> OpticalConfig:
    return OpticalConfig(
        lambda_exc_nm=args.lambda_exc_nm, lambda_em_nm=args.lambda_em_nm,
        numerical_aperture=args.na, refractive_index=args.refractive_index,
        magnification=args.magnification, array_side=args.array_side,
        element_size_nm=args.element_size_nm,
        element_pitch_nm=args.element_pitch_nm, psf_model=args.psf_model)


def _grid_from(args) -> ScanGrid:
    return ScanGrid(args.size, args.size, args.step_nm, args.step_nm)


def _provenance(args, command: str) -> dict:
    skip = {"func", "threads"}
    resolved = {k: v for k, v in sorted(vars(args).items())
                if k not in skip and v is not None}
    resolved = {k: (str(v) if not isinstance(v, (int, float, bool, str)) else v)
                for k, v in resolved.items()}
    return {"command": command, "args": resolved}


def _write_csv(path, header_row, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header_row)
        writer.writerows(rows)


def _cmd_simulate_psf(args):
    stack = psf_stack(_config_from(args), _grid_from(args))
    cont.write(cont.from_psf_stack(stack, _provenance(args, "simulate-psf")),
               args.output)
    return 0


def _phantom_from_args(args, grid):
    kind = args.phantom.replace("-", "_")
    params = {}
    if kind == "point_sources":
        if args.positions:
            pts = [tuple(float(v) for v in p.split(","))
                   for p in args.positions.split(";") if p]
            params["positions_nm"] = pts
        else:
            params["n_points"] = args.points
    elif kind == "line_pairs":
        if args.spacing_nm is None:
            raise _UsageError("--spacing-nm is required for line-pairs")
        params["spacing_nm"] = args.spacing_nm
    elif kind == "siemens_star":
        params["n_spokes"] = args.spokes
        if args.radius_nm is not None:
            params["radius_nm"] = args.radius_nm
    return make_phantom(kind, grid, photons=args.photons,
                        seed=args.seed, **params)


def _cmd_simulate_dataset(args):
    config = _config_from(args)
    grid = _grid_from(args)
    seeds = np.random.SeedSequence(args.seed).generate_state(2)
    stack = psf_stack(config, grid)
    phantom = _phantom_from_args(args, grid)
    if args.background is not None:
        dataset = forward_with_background(phantom, stack,
                                          BackgroundModel(args.background))
    else:
        dataset = forward(phantom, stack)
    if not args.no_noise:
        dataset = add_poisson(dataset, int(seeds[1]))
    provenance = _provenance(args, "simulate-dataset")
    provenance["seed"] = args.seed
    cont.write(cont.from_dataset(dataset, provenance), args.output)
    return 0


def _cmd_sum(args):
    dataset = cont.to_dataset(cont.read(args.input))
    cont.write(cont.from_recon(sum_image(dataset), _provenance(args, "sum")),
               args.output)
    return 0


def _cmd_fingerprint(args):
    dataset = cont.to_dataset(cont.read(args.input))
    fp = fingerprint_from_data(dataset)
    rows = [[f"{v:.10g}" for v in row] for row in fp.values]
    _write_csv(args.output, [f"col{j}_total_photons" for j in range(fp.values.shape[1])],
               rows)
    return 0


def _cmd_shifts(args):
    dataset = cont.to_dataset(cont.read(args.input))
    shifts = estimate_shifts(dataset, subpixel=not args.no_subpixel)
    px = shifts.pixels(dataset.grid)
    rows = []
    for c in range(shifts.n_channels):
        yd, xd = dataset.detector.positions_nm[c]
        rows.append([c, f"{yd:.6g}", f"{xd:.6g}",
                     f"{shifts.vectors_nm[c, 0]:.6g}", f"{shifts.vectors_nm[c, 1]:.6g}",
                     f"{px[c, 0]:.6g}", f"{px[c, 1]:.6g}",
                     int(shifts.reliable[c])])
    _write_csv(args.output,
               ["channel", "xd_y_nm", "xd_x_nm", "shift_y_nm", "shift_x_nm",
                "shift_y_px", "shift_x_px", "reliable"],
               rows)
    return 0


def _cmd_apr(args):
    dataset = cont.to_dataset(cont.read(args.input))
    shifts = estimate_shifts(dataset, subpixel=not args.no_subpixel)
    out = apr(dataset, shifts)
    cont.write(cont.from_recon(out, _provenance(args, "apr")), args.output)
    return 0


def _cmd_deconvolve(args):
    dataset = cont.to_dataset(cont.read(args.input))
    stack = cont.to_psf_stack(cont.read(args.psf))
    background = BackgroundModel(args.background) if args.background is not None else None
    out = rl_deconvolve(dataset, stack, args.iterations, background=background,
                        compute_nll=args.log is not None)
    if args.log is not None:
        rows = [[k + 1, f"{nll:.12g}", f"{flux:.12g}"]
                for k, (nll, flux) in enumerate(zip(out.meta["nll_history"],
                                                    out.meta["flux_history"]))]
        _write_csv(args.log, ["iteration", "nll", "flux_photons"], rows)
    cont.write(cont.from_recon(out, _provenance(args, "deconvolve")), args.output)
    return 0


def _cmd_downsample(args):
    dataset = cont.to_dataset(cont.read(args.input))
    cont.write(cont.from_dataset(downsample(dataset),
                                 _provenance(args, "downsample")), args.output)
    return 0


def _report_block(report) -> str:
    return "\n".join(report.lines())


def _report_json(report) -> dict:
    return {"scan_step_nm": list(report.scan_step_nm),
            "mu_delta_nm": list(report.mu_delta_nm),
            "residual_nm": list(report.residual_nm),
            "tolerance_fraction": report.tolerance_fraction,
            "satisfied": report.satisfied}


def _cmd_check_sampling(args):
    dataset = cont.to_dataset(cont.read(args.input))
    shifts = estimate_shifts(dataset)
    report = check_sampling_condition(shifts, dataset.grid, args.tolerance)
    print(_report_block(report))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(_report_json(report), fh, indent=2, sort_keys=True)
    return 0


def _cmd_upsample_reconstruct(args):
    dataset = cont.to_dataset(cont.read(args.input))
    if args.method == "rl":
        if args.psf is None:
            raise _UsageError("--psf (fine-grid stack) is required for --method rl")
        source = cont.to_psf_stack(cont.read(args.psf))
    elif args.psf is not None:
        source = shift_vectors_from_psf(cont.to_psf_stack(cont.read(args.psf)))
    else:
        source = estimate_shifts(dataset)
    out = upsampled_reconstruct(dataset, source, method=args.method,
                                iterations=args.iterations,
                                include_center=not args.exclude_center,
                                tolerance_fraction=args.tolerance)
    report = out.meta["sampling_report"]
    print(_report_block(report))
    provenance = _provenance(args, "upsample-reconstruct")
    provenance["sampling_report"] = _report_json(report)
    cont.write(cont.from_recon(out, provenance), args.output)
    return 0


def _cmd_spectrum(args):
    image, grid, _ = cont.to_image(cont.read(args.input))
    spec = radial_spectrum(image, grid.step_x, assume_centered=args.centered)
    rows = [[f"{k:.10g}", f"{v:.10g}"] for k, v in zip(spec.k_bins, spec.values)]
    _write_csv(args.output, ["k_per_nm", "amplitude"], rows)
    return 0


def _cmd_fit_psf(args):
    c = cont.read(args.input)
    if c.header["kind"] == "psf":
        stack = cont.to_psf_stack(c)
        channel = args.channel
        if channel is None:
            channel = stack.detector.central_index if stack.detector else 0
        image = stack.data[:, :, channel]
        step = stack.grid.step_x if args.axis == "x" else stack.grid.step_y
    else:
        image, grid, _ = cont.to_image(c)
        step = grid.step_x if args.axis == "x" else grid.step_y
    fit = fit_gaussian_profile(image, axis=args.axis, step_nm=step)
    print(f"amplitude: {fit.amplitude:.6g} +- {fit.amplitude_err:.3g}")
    print(f"mean_nm: {fit.mean_nm:.6g} +- {fit.mean_err_nm:.3g}")
    print(f"sigma_nm: {fit.sigma_nm:.6g} +- {fit.sigma_err_nm:.3g}")
    print(f"fwhm_nm: {fit.fwhm_nm:.6g} +- {fit.fwhm_err_nm:.3g}")
    if args.output:
        _write_csv(args.output,
                   ["axis", "amplitude", "amplitude_err", "mean_nm", "mean_err_nm",
                    "sigma_nm", "sigma_err_nm", "fwhm_nm", "fwhm_err_nm"],
                   [[args.axis, fit.amplitude, fit.amplitude_err, fit.mean_nm,
                     fit.mean_err_nm, fit.sigma_nm, fit.sigma_err_nm,
                     fit.fwhm_nm, fit.fwhm_err_nm]])
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="ismkit",
                     description="Simulate and reconstruct detector-array "
                                 "scanning microscopy data (lengths in nm).")
    parser.add_argument("--threads", type=int, default=1,
                        help="cap FFT worker threads (results do not depend on it)")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate-psf", help="write a PSF stack container")
    _add_optics_args(p)
    _add_grid_args(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_simulate_psf)

    p = sub.add_parser("simulate-dataset", help="simulate a noisy dataset")
    _add_optics_args(p)
    _add_grid_args(p)
    p.add_argument("--phantom", choices=("point-sources", "line-pairs", "siemens-star"),
                   default="point-sources")
    p.add_argument("--points", type=int, default=5)
    p.add_argument("--positions", help="semicolon-separated y,x pairs in nm")
    p.add_argument("--spacing-nm", type=float)
    p.add_argument("--spokes", type=int, default=8)
    p.add_argument("--radius-nm", type=float)
    p.add_argument("--photons", type=float)
    p.add_argument("--background", type=float, help="constant rate per pixel per channel")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-noise", action="store_true",
                   help="skip the Poisson draw, keep intensities")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_simulate_dataset)

    p = sub.add_parser("sum", help="channel-summed image")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_sum)

    p = sub.add_parser("fingerprint", help="per-channel totals as CSV")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_fingerprint)

    p = sub.add_parser("shifts", help="estimate shift vectors, write CSV")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--no-subpixel", action="store_true")
    p.set_defaults(func=_cmd_shifts)

    p = sub.add_parser("apr", help="adaptive pixel reassignment image")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--no-subpixel", action="store_true")
    p.set_defaults(func=_cmd_apr)

    p = sub.add_parser("deconvolve", help="multi-image Richardson-Lucy")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--psf", required=True, help="PSF stack container")
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--background", type=float)
    p.add_argument("--log", help="CSV of per-iteration nll and flux")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_deconvolve)

    p = sub.add_parser("downsample", help="drop every other scan pixel")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_downsample)

    p = sub.add_parser("check-sampling", help="report the upsampling condition")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--tolerance", type=float, default=0.1)
    p.add_argument("--json", help="also write the report as JSON")
    p.set_defaults(func=_cmd_check_sampling)

    p = sub.add_parser("upsample-reconstruct",
                       help="reconstruct at half the scan step from the central ring")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--method", choices=("apr", "rl"), default="rl")
    p.add_argument("--psf", help="fine-grid PSF stack (required for rl)")
    p.add_argument("--iterations", type=int, default=30)
    p.add_argument("--tolerance", type=float, default=0.1)
    p.add_argument("--exclude-center", action="store_true",
                   help="use the 8 ring elements without the central one")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_upsample_reconstruct)

    p = sub.add_parser("spectrum", help="radial spectrum of an image, as CSV")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--centered", action="store_true",
                   help="treat the image content as centered on the grid")
    p.set_defaults(func=_cmd_spectrum)

    p = sub.add_parser("fit-psf", help="Gaussian profile fit through the peak")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--channel", type=int, help="channel for PSF containers")
    p.add_argument("--axis", choices=("x", "y"), default="x")
    p.add_argument("-o", "--output", help="optional CSV output")
    p.set_defaults(func=_cmd_fit_psf)

    return parser


def run(argv) -> int:
    """Execute one subcommand: 0 success, 1 usage error, 2 data error."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_help()
        return 1
    workers = (_fft.set_workers(args.threads) if args.threads and args.threads > 1
               else nullcontext())
    try:
        with workers:
            return args.func(args) or 0
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
