"""Command-line entry point: reproducible pipelines for flow generation,
dataset construction, training, evaluation, invariance audits, scaling
benchmarks, and contour export.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 assertion failure.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import bench as bench_mod
from . import clouds, contour, flow
from .training import (
    Model,
    TrainConfig,
    apply_normalizer,
    evaluate,
    fit_normalizer,
    invariance_audit,
    train,
    write_audit_report,
    write_training_log,
)

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_ASSERT = 4

DEFAULTS = {
    "grid": {"nx": "128", "ny": "80", "dx": "0.0625", "dy": "0.0625",
             "origin_x": "-2.0", "origin_y": "-2.5"},
    "flow": {"u_inf": "1.0", "radius": "0.5"},
    "transport": {"C_nu": "0.02", "C_g": "1.0", "C_zeta": "9.0",
                  "tol": "1e-8", "max_iters": "200"},
    "sampling": {"n": "150", "eps": "0.01", "seed": "0"},
    "train": {"epochs": "200", "batch_size": "64", "lr": "1e-3",
              "lr_halve_every": "80", "seed": "0"},
}


def read_config(path: str | None) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    cfg.read_dict(DEFAULTS)
    if path:
        if not Path(path).is_file():
            raise click.ClickException(f"config file not found: {path}")
        cfg.read(path)
    return cfg


def config_echo(cfg: configparser.ConfigParser) -> dict:
    return {section: dict(cfg[section]) for section in cfg.sections()}


def write_manifest(artifact: Path, command: str, config: dict, seeds: dict,
                   inputs: list[str], t_wall: float) -> None:
    digest = hashlib.sha256(artifact.read_bytes()).hexdigest()
    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": sorted(inputs),
        "artifact": artifact.name,
        "sha256": digest,
        "wall_seconds": round(t_wall, 3),
    }
    out = artifact.with_name(artifact.name + ".manifest.json")
    tmp = out.with_suffix(".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    tmp.replace(out)


def build_grid(cfg) -> flow.StructuredGrid:
    g = cfg["grid"]
    return flow.StructuredGrid(
        nx=g.getint("nx"), ny=g.getint("ny"),
        dx=g.getfloat("dx"), dy=g.getfloat("dy"),
        origin=(g.getfloat("origin_x"), g.getfloat("origin_y")),
    )


def build_transport(cfg) -> flow.TransportConfig:
    t = cfg["transport"]
    return flow.TransportConfig(
        C_nu=t.getfloat("C_nu"), C_g=t.getfloat("C_g"),
        C_zeta=t.getfloat("C_zeta"), tol=t.getfloat("tol"),
        max_iters=t.getint("max_iters"),
        l_max=cfg["flow"].getfloat("radius"),
    )


@click.group()
def main():
    """Frame-invariant neural-operator pipelines."""


@main.command("gen-flow")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--angles", default="10,20,30", help="flow angles in degrees")
@click.option("--rotate-frame-to-angle", is_flag=True,
              help="express each snapshot in a frame rotated by its flow angle")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def cmd_gen_flow(config_path, angles, rotate_frame_to_angle, out_dir):
    """Solve the transport PDE at each flow angle; write CSV snapshots."""
    t0 = time.perf_counter()
    cfg = read_config(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    angle_list = [float(a) for a in angles.split(",") if a.strip()]
    for angle in angle_list:
        grid = build_grid(cfg)
        fld = flow.potential_flow_cylinder(
            grid, cfg["flow"].getfloat("u_inf"), np.deg2rad(angle),
            cfg["flow"].getfloat("radius"),
        )
        try:
            fld.tau = flow.solve_transport(fld, grid, build_transport(cfg))
        except flow.ConvergenceError as exc:
            click.echo(f"solver failed at angle {angle}: {exc}", err=True)
            click.echo(f"residual history: {exc.residuals}", err=True)
            sys.exit(EXIT_NUMERIC)
        if rotate_frame_to_angle:
            fld = flow.rotate_frame(fld, grid, np.deg2rad(angle))
        path = out / f"snapshot_{angle:g}.csv"
        flow.save_snapshot(path, fld, grid)
        write_manifest(path, "gen-flow", config_echo(cfg),
                       {"angle_deg": angle}, [], time.perf_counter() - t0)
        click.echo(f"wrote {path}")


@main.command("gen-data")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--snapshots", multiple=True, required=True, type=click.Path())
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--n", "stencil", type=int, default=None)
@click.option("--eps", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--max-samples-per-field", type=int, default=None)
@click.option("--csv-mirror", type=click.Path(), default=None)
def cmd_gen_data(config_path, snapshots, out_path, stencil, eps, seed,
                 max_samples_per_field, csv_mirror):
    """Build a vector-cloud dataset from solved snapshots."""
    t0 = time.perf_counter()
    cfg = read_config(config_path)
    n = stencil if stencil is not None else cfg["sampling"].getint("n")
    eps_v = eps if eps is not None else cfg["sampling"].getfloat("eps")
    seed_v = seed if seed is not None else cfg["sampling"].getint("seed")
    fields, grids = [], []
    for snap in snapshots:
        if not Path(snap).is_file():
            click.echo(f"missing snapshot: {snap}", err=True)
            sys.exit(EXIT_CONFIG)
        fld, grid = flow.load_snapshot(snap)
        fields.append(fld)
        grids.append(grid)
    try:
        dataset = clouds.build_dataset(
            fields, grids,
            nu=cfg["transport"].getfloat("C_nu"),
            zeta=cfg["transport"].getfloat("C_zeta"),
            n=n, eps=eps_v, seed=seed_v,
            max_samples_per_field=max_samples_per_field,
        )
    except clouds.SamplingError as exc:
        click.echo(f"sampling failed: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)
    clouds.save_dataset(dataset, out_path)
    if csv_mirror:
        clouds.export_dataset_csv(dataset, csv_mirror)
    write_manifest(Path(out_path), "gen-data", config_echo(cfg),
                   {"seed": seed_v}, list(snapshots), time.perf_counter() - t0)
    click.echo(f"wrote {out_path} ({dataset.n_samples} samples, n={n})")


@main.command("train")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--model", "model_kind",
              type=click.Choice(["gkn_ri", "gkn_raw", "vcnn", "vcnn_split"]),
              required=True)
@click.option("--out", "ckpt_path", type=click.Path(), required=True)
@click.option("--log", "log_path", type=click.Path(), default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--seed", type=int, default=None)
def cmd_train(config_path, dataset_path, model_kind, ckpt_path, log_path,
              epochs, batch_size, lr, seed):
    """Train a model; write a checkpoint (with embedded normalizer) + log."""
    t0 = time.perf_counter()
    cfg = read_config(config_path)
    tc = cfg["train"]
    config = TrainConfig(
        epochs=epochs if epochs is not None else tc.getint("epochs"),
        batch_size=batch_size if batch_size is not None else tc.getint("batch_size"),
        lr=lr if lr is not None else tc.getfloat("lr"),
        lr_halve_every=tc.getint("lr_halve_every"),
        seed=seed if seed is not None else tc.getint("seed"),
        model_kind=model_kind,
    )
    dataset = clouds.load_dataset(dataset_path)
    norm = fit_normalizer(dataset)
    normalized = apply_normalizer(dataset, norm)
    model = Model(model_kind, seed=config.seed)
    try:
        history = train(model, normalized, config, norm)
    except Exception as exc:  # noqa: BLE001 - map to exit code
        click.echo(f"training failed: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)
    model.save(ckpt_path, norm)
    if log_path:
        write_training_log(log_path, history)
    write_manifest(Path(ckpt_path), "train", config_echo(cfg),
                   {"seed": config.seed}, [str(dataset_path)],
                   time.perf_counter() - t0)
    click.echo(
        f"final train error {history[-1]['train_error_pct']:.3f}% "
        f"after {len(history)} epochs"
    )


@main.command("eval")
@click.option("--checkpoint", "ckpt_path", type=click.Path(), required=True)
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--out", "report_path", type=click.Path(), default=None)
@click.option("--max-error-pct", type=float, default=None,
              help="exit 4 if the error exceeds this")
def cmd_eval(ckpt_path, dataset_path, report_path, max_error_pct):
    """Evaluate a checkpoint on a dataset; report the normalized error."""
    t0 = time.perf_counter()
    model, norm = Model.load(ckpt_path)
    if norm is None:
        click.echo("checkpoint has no embedded normalizer", err=True)
        sys.exit(EXIT_CONFIG)
    dataset = clouds.load_dataset(dataset_path)
    normalized = apply_normalizer(dataset, norm)
    try:
        report = evaluate(model, normalized, norm)
    except ZeroDivisionError as exc:
        click.echo(f"evaluation failed: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)
    click.echo(f"error: {report.error_pct:.4f}%")
    if report_path:
        with open(report_path, "w") as fh:
            fh.write("center_x,center_y,tau_true,tau_pred,abs_error\n")
            for k in range(dataset.n_samples):
                fh.write(
                    f"{dataset.centers[k, 0]:.17g},{dataset.centers[k, 1]:.17g},"
                    f"{dataset.labels[k]:.17g},{report.predictions[k]:.17g},"
                    f"{report.abs_errors[k]:.17g}\n"
                )
        write_manifest(Path(report_path), "eval", {}, {},
                       [str(ckpt_path), str(dataset_path)],
                       time.perf_counter() - t0)
    if max_error_pct is not None and report.error_pct > max_error_pct:
        click.echo(f"error exceeds threshold {max_error_pct}%", err=True)
        sys.exit(EXIT_ASSERT)


@main.command("audit")
@click.option("--checkpoint", "ckpt_path", type=click.Path(), required=True)
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--rotations", default="35,70,90,180", help="degrees")
@click.option("--permutation-seeds", default="1,2")
@click.option("--out", "report_path", type=click.Path(), default=None)
@click.option("--max-deviation", type=float, default=None,
              help="exit 4 if any deviation exceeds this")
def cmd_audit(ckpt_path, dataset_path, rotations, permutation_seeds,
              report_path, max_deviation):
    """Measure output deviation under rotations/translations/permutations."""
    model, norm = Model.load(ckpt_path)
    dataset = clouds.load_dataset(dataset_path)
    if norm is not None:
        dataset = apply_normalizer(dataset, norm)
    transforms = [("rotation", np.deg2rad(float(r)))
                  for r in rotations.split(",") if r.strip()]
    transforms.append(("translation", (5.0, -3.0)))
    transforms += [("permutation", int(s))
                   for s in permutation_seeds.split(",") if s.strip()]
    results = invariance_audit(model, dataset, transforms)
    for row in results:
        kind, arg = row["transform"][0], row["transform"][1]
        click.echo(f"{kind}:{arg} -> max deviation {row['max_deviation']:.3e}")
    if report_path:
        write_audit_report(report_path, results)
    if max_deviation is not None:
        worst = max(r["max_deviation"] for r in results)
        if worst > max_deviation:
            click.echo(f"deviation {worst:.3e} exceeds {max_deviation}", err=True)
            sys.exit(EXIT_ASSERT)


@main.command("bench")
@click.option("--n-values", default="25,50,100,200")
@click.option("--samples", type=int, default=48)
@click.option("--repetitions", type=int, default=3)
@click.option("--max-bytes", type=int, default=None)
@click.option("--skip-timing", is_flag=True)
@click.option("--out", "report_path", type=click.Path(), default=None)
@click.option("--assert-slopes", is_flag=True,
              help="exit 4 unless payload slopes are 2.0/1.0 and GKN time slope exceeds VCNN's")
def cmd_bench(n_values, samples, repetitions, max_bytes, skip_timing,
              report_path, assert_slopes):
    """Memory/time scaling study over stencil sizes."""
    ns = [int(v) for v in n_values.split(",") if v.strip()]
    report = bench_mod.run_scaling_study(
        ns, samples, repetitions, max_bytes,
        measure_time=not skip_timing,
    )
    for series, slope in sorted(report.fitted_slopes.items()):
        click.echo(f"{series}: slope {slope:.3f}")
    if report_path:
        report.to_csv(report_path)
    if assert_slopes:
        ok = (
            abs(report.fitted_slopes["gkn_ri_payload"] - 2.0) < 1e-12
            and abs(report.fitted_slopes["vcnn_payload"] - 1.0) < 1e-12
        )
        if not skip_timing:
            ok = ok and (
                report.fitted_slopes["gkn_ri_time"] > report.fitted_slopes["vcnn_time"]
            )
        if not ok:
            click.echo("scaling assertions failed", err=True)
            sys.exit(EXIT_ASSERT)


@main.command("export-contour")
@click.option("--snapshot", "snapshot_path", type=click.Path(), required=True)
@click.option("--prediction", "prediction_path", type=click.Path(), default=None,
              help="eval report CSV to scatter onto the same grid")
@click.option("--out-prefix", required=True)
def cmd_export_contour(snapshot_path, prediction_path, out_prefix):
    """Write (x, y, value) CSV and SVG heatmaps on a shared color scale."""
    fld, grid = flow.load_snapshot(snapshot_path)
    pos = flow.cell_positions(grid, fld.frame_rotation)
    tau = fld.tau
    contour.export_contour_csv(f"{out_prefix}_truth.csv", pos[..., 0], pos[..., 1], tau)
    vmin, vmax = float(tau.min()), float(tau.max())
    pred_grid = None
    if prediction_path:
        rows = np.loadtxt(prediction_path, delimiter=",", skiprows=1)
        pred_grid = np.full_like(tau, np.nan)
        flat_pos = pos.reshape(-1, 2)
        tol = 0.5 * min(grid.dx, grid.dy)
        for cx, cy, _, tp, _ in rows:
            d2 = np.sum((flat_pos - (cx, cy)) ** 2, axis=1)
            j = int(np.argmin(d2))
            if d2[j] > tol * tol:
                click.echo(f"prediction point ({cx}, {cy}) not on snapshot grid",
                           err=True)
                sys.exit(EXIT_CONFIG)
            pred_grid.ravel()[j] = tp
        filled = np.nan_to_num(pred_grid, nan=0.0)
        contour.export_contour_csv(
            f"{out_prefix}_prediction.csv", pos[..., 0], pos[..., 1], filled
        )
    contour.render_heatmap_svg(
        f"{out_prefix}_truth.svg", tau, vmin, vmax,
        mask=grid.obstacle_mask, title="truth",
    )
    if pred_grid is not None:
        contour.render_heatmap_svg(
            f"{out_prefix}_prediction.svg", np.nan_to_num(pred_grid, nan=0.0),
            vmin, vmax, mask=grid.obstacle_mask, title="prediction",
        )
    click.echo(f"wrote {out_prefix}_*.csv/svg")


if __name__ == "__main__":
    main()
