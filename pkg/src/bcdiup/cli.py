"""Command-line pipeline driver.

Subcommands cover the full experiment: simulate the ground truth, bin it to
coarse detector frames, recover the fine volume, score it, derive design
tables, and phase-retrieve real-space crystals.  Every report path writes a
CSV plus a rendered PNG figure; every command writes a manifest so that two
runs with equal configs are byte-comparable.

Exit codes: 0 success, 2 invalid config, 3 infeasible geometry,
4 numerical failure.
"""

import functools
import hashlib
import json
import os
import sys
import tempfile

import click
import numpy as np

from . import __version__
from .arrayio import read_array, write_array
from .config import config_fingerprint, default_config, load_config
from .crystal import build_crystal, ground_truth_intensity
from .detector import bin_slice, central_roi, design_table_csv, design_tables
from .errors import ConfigError, GeometryError, NumericalError
from .metrics import per_slice_srtf, srtf_sweep, sweep_csv
from .phasing import error_history_csv, register_and_compare, run_recipe
from .plots import (
    save_design_table_figure,
    save_error_history_figure,
    save_reconstruction_figure,
    save_slice_comparison_figure,
    save_srtf_summary_figure,
    save_sweep_figure,
)
from .recovery import feasibility_threshold, recover_volume


def _atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".txt-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(outdir, command, config, inputs, outputs, extra=None):
    manifest = {
        "command": command,
        "config_sha256": config_fingerprint(config),
        "package_version": __version__,
        "inputs": {os.path.basename(p): _sha256(p) for p in inputs},
        "outputs": {os.path.basename(p): _sha256(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(outdir, "manifest.json")
    _atomic_write_text(path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def _load(config_path, seed):
    config = load_config(config_path) if config_path else default_config()
    if seed is not None:
        config.seed = seed
        config.crystal.seed = seed
    return config


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        verbose = kwargs.get("verbose", False)
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except GeometryError as exc:
            click.echo(f"geometry error: {exc}", err=True)
            sys.exit(3)
        except NumericalError as exc:
            click.echo(f"numerical error: {exc}", err=True)
            sys.exit(4)
        except (ValueError, OSError) as exc:
            if verbose:
                raise
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


def common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(), default=None,
                      help="TOML experiment config (defaults to the pinned experiment).")(fn)
    fn = click.option("--output", "outdir", type=click.Path(), required=True)(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Override the config seed.")(fn)
    fn = click.option("--threads", type=int, default=1, envvar="BCDI_THREADS",
                      show_envvar=True)(fn)
    fn = click.option("--verbose", is_flag=True, default=False)(fn)
    return fn


@click.group()
@click.version_option(version=__version__)
def main():
    """Simulation and sparse-recovery toolkit for high-energy Bragg CDI."""


@main.command()
@common_options
@_handle_errors
def simulate(config_path, outdir, seed, threads, verbose):
    """Build the crystal and its ground-truth diffraction volume."""
    config = _load(config_path, seed)
    os.makedirs(outdir, exist_ok=True)
    crystal = build_crystal(config.crystal)
    intensity = ground_truth_intensity(crystal, workers=threads)
    cpath = os.path.join(outdir, "crystal.bcd")
    ipath = os.path.join(outdir, "intensity.bcd")
    write_array(cpath, crystal)
    write_array(ipath, intensity.values)
    _write_manifest(outdir, "simulate", config, [], [cpath, ipath])
    if verbose:
        click.echo(f"crystal voxels: {int(np.count_nonzero(crystal))}")
    click.echo(f"wrote {cpath} and {ipath}")


@main.command(name="bin")
@common_options
@click.option("--intensity", "intensity_path", type=click.Path(exists=True), required=True)
@_handle_errors
def bin_cmd(config_path, outdir, seed, threads, verbose, intensity_path):
    """Bin the intensity volume into coarse stacks, one per detector offset."""
    config = _load(config_path, seed)
    os.makedirs(outdir, exist_ok=True)
    vol = read_array(intensity_path).real
    geom = config.geometry
    rows, cols = central_roi(vol.shape[0], geom.roi_fine)
    outputs = []
    for i, off in enumerate(geom.offsets):
        stack = np.stack(
            [bin_slice(vol[rows, cols, k], geom, off) for k in range(vol.shape[2])],
            axis=2,
        )
        path = os.path.join(outdir, f"coarse_offset_{i:02d}.bcd")
        write_array(path, stack)
        outputs.append(path)
    index = {
        "roi_fine": geom.roi_fine,
        "pbf": geom.pbf,
        "scheme": geom.scheme,
        "offsets": [list(o) for o in geom.offsets],
        "requested_positions": geom.n_requested,
        "unique_positions": geom.n_offsets,
        "duplicates_dropped": geom.n_requested - geom.n_offsets,
        "n_slices": vol.shape[2],
    }
    ipath = os.path.join(outdir, "measurements.json")
    _atomic_write_text(ipath, json.dumps(index, sort_keys=True, indent=2) + "\n")
    _write_manifest(outdir, "bin", config, [intensity_path], outputs + [ipath])
    click.echo(
        f"wrote {len(outputs)} coarse stacks "
        f"({index['duplicates_dropped']} duplicate offsets dropped)"
    )


@main.command()
@common_options
@click.option("--measurements", "measdir", type=click.Path(exists=True), required=True)
@_handle_errors
def recover(config_path, outdir, seed, threads, verbose, measdir):
    """Solve the sparse-recovery problem for every slice."""
    config = _load(config_path, seed)
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(measdir, "measurements.json")) as fh:
        index = json.load(fh)
    geom = config.geometry
    if index["pbf"] != geom.pbf or index["roi_fine"] != geom.roi_fine:
        raise GeometryError(
            f"measurement geometry (pbf {index['pbf']}, roi {index['roi_fine']}) "
            f"does not match config (pbf {geom.pbf}, roi {geom.roi_fine})"
        )
    stacks = [
        read_array(os.path.join(measdir, f"coarse_offset_{i:02d}.bcd")).real
        for i in range(index["unique_positions"])
    ]
    n_meas = sum(s[:, :, 0].size for s in stacks)
    # a sparsity budget at or above the pixel count carries no information
    k_sig = config.k_significant if config.k_significant < geom.roi_fine ** 2 else None
    need = feasibility_threshold(k_sig, geom.roi_fine) if k_sig else None
    infeasible = bool(need is not None and n_meas < need)
    records = []
    import warnings as _warnings

    with _warnings.catch_warnings():
        _warnings.simplefilter("ignore")
        volume = recover_volume(
            stacks, geom, config.recovery, workers=threads,
            method=config.solver, feasibility_k=k_sig,
            log_records=records,
        )
    rpath = os.path.join(outdir, "recovered.bcd")
    write_array(rpath, volume)
    log_lines = [
        json.dumps(
            {"slice": r.slice_index, "iterations": r.iterations,
             "objective": r.final_objective, "nnz": r.nnz,
             "converged": r.converged},
            sort_keys=True,
        )
        for r in sorted(records, key=lambda r: r.slice_index)
    ]
    lpath = os.path.join(outdir, "solver_log.jsonl")
    _atomic_write_text(lpath, "\n".join(log_lines) + "\n")
    _write_manifest(
        outdir, "recover", config,
        [os.path.join(measdir, "measurements.json")],
        [rpath, lpath],
        extra={"infeasible_warning": infeasible, "n_measurements": n_meas,
               "feasibility_threshold": need},
    )
    if infeasible:
        click.echo(
            f"warning: {n_meas} measurements below threshold {need}; "
            "recovery marked unreliable", err=True,
        )
    click.echo(f"wrote {rpath}")


@main.command()
@common_options
@click.option("--recovered", "recovered_path", type=click.Path(exists=True))
@click.option("--truth", "truth_path", type=click.Path(exists=True), required=True)
@click.option("--sweep", "do_sweep", is_flag=True, default=False,
              help="Run the measure-and-recover grid instead of comparing volumes.")
@click.option("--pbf-list", default="4,5,6", show_default=True)
@click.option("--positions-list", default="1,13", show_default=True)
@_handle_errors
def evaluate(config_path, outdir, seed, threads, verbose, recovered_path,
             truth_path, do_sweep, pbf_list, positions_list):
    """Score recovery fidelity (SRTF) against the ground truth."""
    config = _load(config_path, seed)
    os.makedirs(outdir, exist_ok=True)
    truth = read_array(truth_path).real
    outputs = []
    if do_sweep:
        pbfs = [int(v) for v in pbf_list.split(",") if v]
        poss = [int(v) for v in positions_list.split(",") if v]
        rows_sl, cols_sl = central_roi(truth.shape[0], config.geometry.roi_fine)
        rows = srtf_sweep(
            truth, pbfs, poss, config.recovery,
            roi_rows=rows_sl, roi_cols=cols_sl, floor=config.floor,
            method=config.solver,
        )
        cpath = os.path.join(outdir, "srtf_sweep.csv")
        _atomic_write_text(cpath, sweep_csv(rows))
        fpath = save_sweep_figure(rows, os.path.join(outdir, "srtf_sweep.png"))
        outputs += [cpath, fpath]
    else:
        if recovered_path is None:
            raise ConfigError("evaluate needs --recovered (or --sweep)")
        rec = read_array(recovered_path).real
        if rec.shape != truth.shape:
            rows_sl, cols_sl = central_roi(truth.shape[0], rec.shape[0])
        else:
            rows_sl = cols_sl = slice(None)
        stats = per_slice_srtf(rec, truth, roi_rows=rows_sl, roi_cols=cols_sl,
                               floor=config.floor)
        lines = ["slice,mu,sigma,n_valid,floor"]
        for k, mu, sd, n in stats:
            lines.append(f"{k},{mu!r},{sd!r},{n},{config.floor!r}")
        cpath = os.path.join(outdir, "srtf.csv")
        _atomic_write_text(cpath, "\n".join(lines) + "\n")
        fpath = save_srtf_summary_figure(stats, os.path.join(outdir, "srtf.png"))
        mid = truth.shape[2] // 2
        spath = save_slice_comparison_figure(
            truth[rows_sl, cols_sl, mid], rec[:, :, mid],
            os.path.join(outdir, "central_slice.png"),
        )
        outputs += [cpath, fpath, spath]
    inputs = [truth_path] + ([recovered_path] if recovered_path else [])
    _write_manifest(outdir, "evaluate", config, inputs, outputs)
    click.echo(f"wrote {', '.join(os.path.basename(p) for p in outputs)}")


@main.command()
@common_options
@click.option("--k", "k_significant", type=int, default=1499, show_default=True)
@_handle_errors
def tables(config_path, outdir, seed, threads, verbose, k_significant):
    """Emit the experiment-design tables (M and f over PBF x positions)."""
    config = _load(config_path, seed)
    os.makedirs(outdir, exist_ok=True)
    rows = design_tables(
        fine_roi=config.geometry.roi_fine,
        pbf_range=(2, 3, 4, 5, 6),
        positions_range=range(1, 14),
        k_significant=k_significant,
    )
    cpath = os.path.join(outdir, "design_tables.csv")
    _atomic_write_text(cpath, design_table_csv(rows))
    fpath = save_design_table_figure(rows, os.path.join(outdir, "design_tables.png"))
    _write_manifest(outdir, "tables", config, [], [cpath, fpath])
    click.echo(f"wrote {cpath} and {fpath}")


@main.command()
@common_options
@click.option("--intensity", "intensity_path", type=click.Path(exists=True), required=True)
@click.option("--truth", "truth_path", type=click.Path(exists=True), default=None,
              help="True crystal volume for the comparison report.")
@_handle_errors
def retrieve(config_path, outdir, seed, threads, verbose, intensity_path, truth_path):
    """Phase-retrieve a real-space crystal from an intensity volume."""
    config = _load(config_path, seed)
    os.makedirs(outdir, exist_ok=True)
    intensity = read_array(intensity_path).real
    if intensity.ndim != 3:
        raise GeometryError("retrieve expects a 3D intensity volume")
    frame = config.crystal.array_dims
    if intensity.shape != frame:
        # ROI-sized recovered volumes are embedded back into the detector frame
        if (intensity.shape[0] > frame[0] or intensity.shape[1] > frame[1]
                or intensity.shape[2] != frame[2]):
            raise GeometryError(
                f"intensity shape {intensity.shape} does not fit the "
                f"configured frame {frame}"
            )
        rows, cols = central_roi(frame[0], intensity.shape[0])
        embedded = np.zeros(frame)
        embedded[rows, cols, :] = intensity
        intensity = embedded
    state = run_recipe(intensity, config.recipe, seed=config.phasing_seed(),
                       workers=threads)
    rpath = os.path.join(outdir, "reconstruction.bcd")
    write_array(rpath, state.object)
    cpath = os.path.join(outdir, "error_history.csv")
    _atomic_write_text(cpath, error_history_csv(state, config.recipe.stages))
    fpath = save_error_history_figure(state.error_history,
                                      os.path.join(outdir, "error_history.png"))
    outputs = [rpath, cpath, fpath]
    extra = {"iterations": state.iteration}
    inputs = [intensity_path]
    if truth_path:
        truth = read_array(truth_path)
        report = register_and_compare(state.object, truth)
        jpath = os.path.join(outdir, "comparison.json")
        _atomic_write_text(jpath, json.dumps({
            "support_overlap": report.support_overlap,
            "phase_rmse": report.phase_rmse,
            "flipped": report.flipped,
            "shift": list(report.shift),
        }, sort_keys=True, indent=2) + "\n")
        gpath = save_reconstruction_figure(state.object, truth,
                                           os.path.join(outdir, "reconstruction.png"))
        outputs += [jpath, gpath]
        inputs.append(truth_path)
        extra["support_overlap"] = report.support_overlap
    _write_manifest(outdir, "retrieve", config, inputs, outputs, extra=extra)
    click.echo(f"wrote {rpath}")


@main.command()
@common_options
@click.pass_context
def pipeline(ctx, config_path, outdir, seed, threads, verbose):
    """simulate -> bin -> recover -> evaluate -> retrieve, end to end."""
    os.makedirs(outdir, exist_ok=True)
    sub = lambda name: os.path.join(outdir, name)
    common = dict(config_path=config_path, seed=seed, threads=threads, verbose=verbose)
    ctx.invoke(simulate, outdir=sub("simulate"), **common)
    ctx.invoke(bin_cmd, outdir=sub("bin"),
               intensity_path=os.path.join(sub("simulate"), "intensity.bcd"), **common)
    ctx.invoke(recover, outdir=sub("recover"), measdir=sub("bin"), **common)
    ctx.invoke(evaluate, outdir=sub("evaluate"),
               recovered_path=os.path.join(sub("recover"), "recovered.bcd"),
               truth_path=os.path.join(sub("simulate"), "intensity.bcd"),
               do_sweep=False, pbf_list="", positions_list="", **common)
    ctx.invoke(retrieve, outdir=sub("retrieve"),
               intensity_path=os.path.join(sub("recover"), "recovered.bcd"),
               truth_path=os.path.join(sub("simulate"), "crystal.bcd"), **common)
    click.echo(f"pipeline complete under {outdir}")


if __name__ == "__main__":
    main()
