"""Command-line surface: reproducible experiments from one config file.

Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 I/O error.
`--threads N` caps the BLAS/OpenMP worker budget and must be handled before
numpy loads, which is why all heavy imports live inside the subcommands.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
from pathlib import Path


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # map argparse failures onto exit code 1
        from .errors import ValidationError

        raise ValidationError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="folheat", description=__doc__)
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS/OpenMP threads (must be a top-level flag)")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("gen-mesh", help="write a structured grid mesh file")
    q.add_argument("--nx", type=int, required=True)
    q.add_argument("--ny", type=int, required=True)
    q.add_argument("--width", type=float, default=1.0)
    q.add_argument("--height", type=float, default=1.0)
    q.add_argument("--out", required=True)

    q = sub.add_parser("validate", help="check a mesh file against the format and invariants")
    q.add_argument("--mesh", required=True)

    q = sub.add_parser("gen-samples", help="generate the training sample set")
    q.add_argument("--config", default=None)
    q.add_argument("--fourier", type=int, default=None)
    q.add_argument("--gaussian", type=int, default=None)
    q.add_argument("--constant", type=int, default=None)
    q.add_argument("--seed", type=int, default=None)
    q.add_argument("--out", required=True)

    q = sub.add_parser("train", help="train a model per the config")
    q.add_argument("--config", default=None)
    q.add_argument("--samples", default=None,
                   help="reuse a gen-samples directory instead of regenerating")
    q.add_argument("--log-every", type=int, default=50)
    q.add_argument("--out", required=True)

    q = sub.add_parser("predict", help="roll out a trained model from an initial field")
    q.add_argument("--config", default=None)
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--init", required=True,
                   help="'canonical:<name>' or a field CSV path")
    q.add_argument("--steps", type=int, required=True)
    q.add_argument("--out", required=True)

    q = sub.add_parser("solve-fem", help="reference FE transient solve")
    q.add_argument("--config", default=None)
    q.add_argument("--init", required=True)
    q.add_argument("--steps", type=int, required=True)
    q.add_argument("--alpha", type=float, default=1.0)
    q.add_argument("--dt", type=float, default=None, help="override config dt")
    q.add_argument("--out", required=True)

    q = sub.add_parser("evaluate", help="per-step relative L2 error of pred vs ref")
    q.add_argument("--pred", required=True)
    q.add_argument("--ref", required=True)
    q.add_argument("--dt", type=float, default=None)
    q.add_argument("--out", default=None, help="error CSV path (default: <pred>/errors.csv)")
    q.add_argument("--assert-below", type=float, default=None,
                   help="exit 2 unless every step's E_rr is below this")

    q = sub.add_parser("benchmark", help="time model inference vs FE solve")
    q.add_argument("--config", default=None)
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--steps", type=int, default=10)
    q.add_argument("--repeats", type=int, default=5)
    q.add_argument("--init", default="canonical:const05")
    q.add_argument("--out", default=None, help="report path (default: stdout only)")

    q = sub.add_parser("postprocess", help="flux, cross-sections, and resampled heatmap of a field")
    q.add_argument("--config", default=None)
    q.add_argument("--field", required=True, help="field CSV to post-process")
    q.add_argument("--sections", default="y=0.18,y=0.45,x=0.5")
    q.add_argument("--upsample", type=int, default=165)
    q.add_argument("--out", required=True)
    return p


def _git_hash() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, cwd=Path(__file__).parent, timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _write_manifest(out_dir: Path, command: str, cfg, extra: dict | None = None) -> None:
    from . import __version__

    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["folheat run manifest", f"version {__version__}", f"build {_git_hash()}",
             f"command {command}"]
    for key, value in (extra or {}).items():
        lines.append(f"{key} {value}")
    lines.append("config:")
    for cfg_line in cfg.raw_text.splitlines():
        lines.append("  " + cfg_line)
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def _read_manifest_value(dir_path: Path, key: str) -> str | None:
    mf = dir_path / "manifest.txt"
    if not mf.exists():
        return None
    for line in mf.read_text().splitlines():
        parts = line.split()
        if len(parts) == 2 and parts[0] == key:
            return parts[1]
    return None


def _problem(cfg):
    """mesh, dofs, conductivity, material, assembled system from a config."""
    from .fem import assemble
    from .mesh import build_dof_map

    mesh = cfg.build_mesh()
    dofs = build_dof_map(mesh, cfg.dirichlet())
    k = cfg.conductivity(mesh)
    mat = cfg.material()
    sys_mats = assemble(mesh, k, mat)
    return mesh, dofs, k, mat, sys_mats


def _initial_field(spec: str, mesh, dofs):
    from .errors import ValidationError
    from .evaluation import canonical_test_fields
    from .fe_solver import load_field

    if spec.startswith("canonical:"):
        name = spec.split(":", 1)[1]
        fields = canonical_test_fields(mesh, dofs)
        if name not in fields:
            raise ValidationError(
                f"unknown canonical field {name!r}; choose from {sorted(fields)}"
            )
        return fields[name]
    field = load_field(spec, mesh)
    # prescribed values win over whatever the file carries on boundary nodes
    return dofs.merge(dofs.extract_free(field))


def cmd_gen_mesh(args) -> int:
    from .mesh import build_structured_grid, serialize_mesh

    mesh = build_structured_grid(args.nx, args.ny, args.width, args.height)
    Path(args.out).write_text(serialize_mesh(mesh))
    print(f"wrote {args.out}: {mesh.n_nodes} nodes, {mesh.n_elems} elements")
    return 0


def cmd_validate(args) -> int:
    from .mesh import load_mesh

    mesh = load_mesh(Path(args.mesh).read_text())
    print(f"{args.mesh}: valid ({mesh.n_nodes} nodes, {mesh.n_elems} elements, "
          f"tags {sorted(mesh.boundary_sets)})")
    return 0


def cmd_gen_samples(args) -> int:
    from .config import load_run_config
    from .mesh import build_dof_map
    from .sampling import build_sample_set, save_sample_set

    cfg = load_run_config(args.config)
    mesh = cfg.build_mesh()
    dofs = build_dof_map(mesh, cfg.dirichlet())
    counts = list(cfg.sample_counts())
    for i, override in enumerate((args.fourier, args.gaussian, args.constant)):
        if override is not None:
            counts[i] = override
    seed = cfg.seed if args.seed is None else args.seed
    fp = cfg.fourier_params()
    ss = build_sample_set(tuple(counts), fp, mesh, dofs, seed)
    out = Path(args.out)
    save_sample_set(out, ss, fp)
    _write_manifest(out, "gen-samples", cfg, {"seed": seed, "counts": "/".join(map(str, counts))})
    print(f"wrote {out}: {ss.n_samples} samples x {ss.samples.shape[1]} free dofs "
          f"(fourier/gaussian/constant = {counts[0]}/{counts[1]}/{counts[2]}, seed {seed})")
    return 0


def cmd_train(args) -> int:
    from .config import load_run_config
    from .errors import FingerprintError
    from .fem import reduce_system
    from .neural import init_model
    from .sampling import build_sample_set, load_sample_set
    from .training import TrainConfig, save_checkpoint, train

    cfg = load_run_config(args.config)
    mesh, dofs, k, mat, sys_mats = _problem(cfg)
    rs = reduce_system(sys_mats, dofs, cfg.dt, 1.0)

    if args.samples:
        samples = load_sample_set(args.samples)
        if samples.fingerprint != dofs.fingerprint:
            raise FingerprintError(
                f"sample set {args.samples} was generated for a different grid"
            )
    else:
        samples = build_sample_set(cfg.sample_counts(), cfg.fourier_params(), mesh, dofs, cfg.seed)

    model = init_model(cfg.arch, mesh, dofs, cfg.hidden_spec(), cfg.activation,
                       seed=cfg.seed, dt=cfg.dt)
    tc = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
                     optimizer=cfg.optimizer, seed=cfg.seed, log_every=args.log_every)
    model, record = train(model, rs, dofs, samples, tc)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "model.folmodel")
    with open(out / "loss_history.csv", "w") as f:
        f.write("epoch,mean_loss\n")
        for i, loss in enumerate(record):
            f.write(f"{i},{float(loss)!r}\n")
    _write_manifest(out, "train", cfg, {"seed": cfg.seed, "dt": repr(cfg.dt),
                                        "final_loss": repr(float(record[-1]))})
    print(f"wrote {out}/model.folmodel ({cfg.arch}, {cfg.activation}); "
          f"final mean loss {record[-1]:.6e}")
    return 0


def cmd_predict(args) -> int:
    from .config import load_run_config
    from .evaluation import rollout
    from .mesh import build_dof_map
    from .fe_solver import Trajectory, save_trajectory
    from .training import load_checkpoint

    cfg = load_run_config(args.config)
    mesh = cfg.build_mesh()
    dofs = build_dof_map(mesh, cfg.dirichlet())
    model = load_checkpoint(args.checkpoint, dofs)
    t0 = _initial_field(args.init, mesh, dofs)
    result = rollout(model, dofs, t0, args.steps)
    out = Path(args.out)
    save_trajectory(out, mesh, Trajectory(result.trajectory, model.dt))
    _write_manifest(out, "predict", cfg,
                    {"dt": repr(float(model.dt)), "steps": args.steps, "init": args.init})
    print(f"wrote {out}: {len(result.trajectory)} fields (dt {model.dt})")
    return 0


def cmd_solve_fem(args) -> int:
    from .fem import reduce_system
    from .config import load_run_config
    from .fe_solver import save_trajectory, solve_transient

    cfg = load_run_config(args.config)
    mesh, dofs, k, mat, sys_mats = _problem(cfg)
    dt = args.dt if args.dt is not None else cfg.dt
    rs = reduce_system(sys_mats, dofs, dt, args.alpha)
    t0 = _initial_field(args.init, mesh, dofs)
    traj = solve_transient(rs, dofs, t0, args.steps)
    out = Path(args.out)
    save_trajectory(out, mesh, traj)
    _write_manifest(out, "solve-fem", cfg,
                    {"dt": repr(float(dt)), "steps": args.steps, "alpha": args.alpha,
                     "init": args.init})
    print(f"wrote {out}: {len(traj.fields)} fields (dt {dt}, alpha {args.alpha})")
    return 0


def cmd_evaluate(args) -> int:
    import numpy as np

    from .errors import NumericalError, ValidationError
    from .evaluation import per_step_errors, write_error_csv
    from .fe_solver import load_trajectory

    pred_dir, ref_dir = Path(args.pred), Path(args.ref)
    dt = args.dt
    if dt is None:
        text = _read_manifest_value(pred_dir, "dt") or _read_manifest_value(ref_dir, "dt")
        dt = float(text) if text else 0.0
    pred = load_trajectory(pred_dir, dt)
    ref = load_trajectory(ref_dir, dt)
    if len(pred.fields) != len(ref.fields):
        raise ValidationError(
            f"step-count mismatch: {len(pred.fields)} predicted vs {len(ref.fields)} reference"
        )
    errors = per_step_errors(pred.fields, ref.fields)
    out = Path(args.out) if args.out else pred_dir / "errors.csv"
    write_error_csv(out, errors, dt)
    marching = errors[1:] if errors.size > 1 else errors
    print(f"wrote {out}: mean E_rr {np.mean(marching):.6f}, "
          f"max {np.max(marching):.6f}, final {errors[-1]:.6f}")
    if args.assert_below is not None and np.max(marching) >= args.assert_below:
        raise NumericalError(
            f"max E_rr {np.max(marching):.6f} is not below {args.assert_below}"
        )
    return 0


def cmd_benchmark(args) -> int:
    from .fem import reduce_system
    from .config import load_run_config
    from .evaluation import benchmark_speed
    from .training import load_checkpoint

    cfg = load_run_config(args.config)
    mesh, dofs, k, mat, sys_mats = _problem(cfg)
    model = load_checkpoint(args.checkpoint, dofs)
    rs = reduce_system(sys_mats, dofs, model.dt, 1.0)
    t0 = _initial_field(args.init, mesh, dofs)
    res = benchmark_speed(model, rs, dofs, t0, n_steps=args.steps, repeats=args.repeats)
    threads = os.environ.get("OMP_NUM_THREADS", "unset")
    report = "\n".join([
        "folheat benchmark report",
        f"grid_free_dofs {dofs.n_free}",
        f"arch {model.arch}",
        f"n_steps {res.n_steps}",
        f"repeats {res.repeats}",
        f"thread_budget {threads}",
        f"median_nn_seconds {res.t_nn!r}",
        f"median_fe_seconds {res.t_fe!r}",
        f"ratio_fe_over_nn {res.ratio!r}",
        f"ratio_defined {res.ratio_defined}",
    ]) + "\n"
    print(report, end="")
    if args.out:
        Path(args.out).write_text(report)
    return 0


def cmd_postprocess(args) -> int:
    import numpy as np

    from .errors import ValidationError
    from .config import load_run_config
    from .evaluation import cross_section, heat_flux, upsample_field, write_pgm, write_section_csv
    from .fe_solver import load_field

    cfg = load_run_config(args.config)
    mesh = cfg.build_mesh()
    k = cfg.conductivity(mesh)
    field = load_field(args.field, mesh)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    flux = heat_flux(mesh, k, field)
    with open(out / "flux.csv", "w") as f:
        f.write("node_id,x,y,qx,qy\n")
        for i in range(mesh.n_nodes):
            f.write(f"{i},{float(mesh.nodes[i,0])!r},{float(mesh.nodes[i,1])!r},"
                    f"{float(flux[i,0])!r},{float(flux[i,1])!r}\n")

    for token in args.sections.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            axis, value = token.split("=")
            value = float(value)
        except ValueError:
            raise ValidationError(f"sections: expected axis=value, got {token!r}") from None
        sec = cross_section(mesh, field, axis.strip(), value)
        write_section_csv(out / f"section_{axis.strip()}_{value}.csv", sec)

    grid = upsample_field(mesh, field, args.upsample, args.upsample)
    np.savetxt(out / "upsampled.csv", grid, delimiter=",", fmt="%r")
    write_pgm(out / "upsampled.pgm", grid)
    _write_manifest(out, "postprocess", cfg, {"field": args.field})
    print(f"wrote {out}: flux.csv, section CSVs, upsampled.csv/.pgm")
    return 0


_COMMANDS = {
    "gen-mesh": cmd_gen_mesh,
    "validate": cmd_validate,
    "gen-samples": cmd_gen_samples,
    "train": cmd_train,
    "predict": cmd_predict,
    "solve-fem": cmd_solve_fem,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
    "postprocess": cmd_postprocess,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # thread caps must land before numpy is imported by any subcommand
    if "--threads" in argv:
        try:
            n = int(argv[argv.index("--threads") + 1])
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
                os.environ[var] = str(n)
        except (IndexError, ValueError):
            pass  # argparse reports the usage error below
    try:
        args = _build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - single translation point to exit codes
        from .errors import NumericalError, ValidationError

        if isinstance(exc, ValidationError):
            print(f"error: {exc}", file=sys.stderr)
            return 1
        if isinstance(exc, NumericalError):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return 2
        if isinstance(exc, OSError):
            print(f"i/o error: {exc}", file=sys.stderr)
            return 3
        raise


if __name__ == "__main__":
    sys.exit(main())
