import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Optional

import dotenv
import pandas as pd

dotenv.load_dotenv()

from pydantic import ValidationError

from resphys.errors import ArtifactError, ResPhysError
from resphys.experiments.ablation import marker_ablation, write_ablation
from resphys.experiments.generators import ExperimentData, generate
from resphys.experiments.metrics import evaluate, write_metrics
from resphys.experiments.pipeline import pseudo_real_cases, sim_cases, sysid_data
from resphys.experiments.spec import RunConfig
from resphys.fitting.dataset import build_dataset, read_dataset, write_dataset
from resphys.learning.checkpoint import load_checkpoint, save_checkpoint
from resphys.learning.rollout import rollout_hybrid, rollout_simfree
from resphys.learning.training import random_search, train, train_simfree
from resphys.markers.interpolation import write_marker_trajectory
from resphys.sim.container import Trajectory, write_trajectory
from resphys.sim.implicit import rollout
from resphys.sim.state import LoadSpec
from resphys.sysid.identification import SysIdReport, sysid_grid, sysid_optimize, write_grid

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)


def setup_logging(level: str = "INFO"):
    """Konfiguracja logowania na stdout z prostym formatem."""
    root = logging.getLogger()
    root.setLevel(level)
    # Jeśli brak handlerów, dodaj StreamHandler
    if not root.handlers:
        handler = logging.StreamHandler(sys.stdout)
        handler.setLevel(level)
        formatter = logging.Formatter(
            "%(asctime)s %(levelname)s [%(name)s] %(message)s"
        )
        handler.setFormatter(formatter)
        root.addHandler(handler)
    logging.getLogger("resphys").setLevel(level)
    logging.getLogger(__name__).setLevel(level)


# Defaults overridable via env (.env is loaded above)
DEFAULT_OUT_DIR = os.getenv("RESPHYS_OUT_DIR", "out")
DEFAULT_JOBS = int(os.getenv("RESPHYS_JOBS", "1"))
DEFAULT_SEED = int(os.getenv("RESPHYS_SEED", "0"))
DEFAULT_LOG_LEVEL = os.getenv("RESPHYS_LOG_LEVEL", "INFO")

# Artifact layout under --out-dir
DATASET_DIR = "dataset"
CHECKPOINT_DIR = "checkpoint"
SIMFREE_CHECKPOINT_DIR = "checkpoint_simfree"
SYSID_OPT_FILE = "sysid_opt.json"
SYSID_GRID_FILE = "sysid_grid.csv"


def load_config(path: str) -> RunConfig:
    config_path = Path(path)
    if not config_path.exists():
        raise ArtifactError(str(config_path))
    return RunConfig.model_validate_json(config_path.read_text())


def evaluation_cases(run: RunConfig, data: ExperimentData):
    """Evaluation cases of the test split: full-state for sim data, markers for pseudo-real."""
    ctx = run.experiment.context(1, data.mesh)
    if data.marker_layout is not None:
        return ctx, pseudo_real_cases(data, ctx, run.fit)
    return ctx, sim_cases(data)


def cmd_simulate(run: RunConfig, args) -> dict:
    """Rollout symulatora (Sim1 lub Sim2) od stanu spoczynku."""
    spec = run.experiment
    ctx = spec.context(run.simulator)
    loads = [LoadSpec(gravity_on=spec.gravity) for _ in range(spec.num_steps)]
    states = rollout(ctx, ctx.rest_state(), loads)
    path = write_trajectory(
        args.out_dir / "simulate",
        Trajectory.from_states(states, None, ctx.h),
        simulator=run.simulator,
        material=ctx.material.model_dump(),
    )
    return {"trajectory": str(path), "steps": spec.num_steps}


def cmd_gen(run: RunConfig, args) -> dict:
    """Generowanie trajektorii docelowych Sim2 (oraz plików markerów dla pseudo-real)."""
    data = generate(run.experiment, args.seed)
    root = args.out_dir / "gen"
    for traj in data.trajectories:
        write_trajectory(root / traj.name, traj.target, name=traj.name, split=traj.split, parameter=traj.parameter)
        if traj.raw_markers is not None:
            write_marker_trajectory(
                root / f"{traj.name}_markers", traj.raw_markers, run.experiment.rate_hz, name=traj.name, split=traj.split
            )
    (root / "splits.json").write_text(
        json.dumps({tag: [t.name for t in data.split(tag)] for tag in ("train", "val", "test", "unused")}, indent=2)
    )
    return {"trajectories": len(data.trajectories), "dir": str(root)}


def cmd_fit(run: RunConfig, args) -> dict:
    """Dopasowanie sił rezydualnych dla wszystkich trajektorii ze splitów."""
    dataset = build_dataset(run.experiment, run.fit, workers=args.jobs, seed=args.seed)
    path = write_dataset(args.out_dir / DATASET_DIR, dataset)
    return {"dataset": str(path), "trajectories": len(dataset.trajectories)}


def cmd_train(run: RunConfig, args) -> dict:
    """Trening sieci rezydualnej (opcjonalnie także baseline SimFree)."""
    dataset = read_dataset(args.out_dir / DATASET_DIR)
    if run.search_budget > 0:
        model, history, _, cfg = random_search(dataset, run.search_budget, args.seed, run.train)
    else:
        (model, history), cfg = train(dataset, run.net, run.train), run.train
    save_checkpoint(args.out_dir / CHECKPOINT_DIR, model, history, cfg)
    result = {"checkpoint": str(args.out_dir / CHECKPOINT_DIR), "val_loss": history.best_val_loss}
    if args.simfree:
        simfree, simfree_history = train_simfree(dataset, run.net, run.train)
        save_checkpoint(args.out_dir / SIMFREE_CHECKPOINT_DIR, simfree, simfree_history, run.train)
        result["simfree_val_loss"] = simfree_history.best_val_loss
    return result


def cmd_rollout(run: RunConfig, args) -> dict:
    """Rollout hybrydowy (lub SimFree) na zbiorze testowym z wytrenowanego checkpointu."""
    if run.method not in ("ResPhys", "SimFree"):
        raise ResPhysError(f"rollout needs a learned method (ResPhys or SimFree), got {run.method}")
    directory = CHECKPOINT_DIR if run.method == "ResPhys" else SIMFREE_CHECKPOINT_DIR
    model, _ = load_checkpoint(args.out_dir / directory)
    data = generate(run.experiment, args.seed)
    ctx, cases = evaluation_cases(run, data)
    root = args.out_dir / "rollout"
    for case in cases:
        if run.method == "ResPhys":
            states = rollout_hybrid(ctx, model, case.initial, case.loads)
        else:
            states = rollout_simfree(model, case.initial, case.loads)
        f_ext = [load.applied_forces(ctx.mesh.num_nodes) for load in case.loads]
        write_trajectory(root / case.name, Trajectory.from_states(states, f_ext, ctx.h), method=run.method)
    return {"method": run.method, "trajectories": len(cases), "dir": str(root)}


def cmd_sysid(run: RunConfig, args) -> dict:
    """Identyfikacja (E, nu): przeszukanie siatki i optymalizacja L-BFGS-B."""
    data = generate(run.experiment, args.seed)
    ctx = run.experiment.context(1, data.mesh)
    items = sysid_data(data, ctx, run.fit)
    table, argmin = sysid_grid(items, ctx, run.sysid, workers=args.jobs)
    write_grid(args.out_dir / SYSID_GRID_FILE, table)
    _, _, report = sysid_optimize(items, ctx, run.sysid)
    (args.out_dir / SYSID_OPT_FILE).write_text(report.model_dump_json(indent=2))
    return {"E_pa": report.youngs_modulus, "nu": report.poissons_ratio, "grid_argmin": argmin}


def cmd_ablate_markers(run: RunConfig, args) -> dict:
    """Ablacja liczby markerów na jednej trajektorii z ciężarkiem 50 g."""
    spec = run.experiment.model_copy(update={"kind": "oscillate", "weights": [0.05], "splits": (1, 0, 0)})
    data = generate(spec, args.seed)
    ctx = spec.context(1, data.mesh)
    table = marker_ablation(
        ctx, data.trajectories[0], run.fit, run.ablation_counts, run.ablation_samples, args.seed, args.jobs
    )
    path = write_ablation(args.out_dir / "ablation.csv", table)
    try:
        from resphys.experiments.plots import render_ablation

        render_ablation(table, args.out_dir / "ablation.png")
    except ImportError as exc:
        logger.info("skipping ablation plot: %s", exc)
    return {"table": str(path), "rows": len(table)}


def cmd_eval(run: RunConfig, args) -> dict:
    """Ewaluacja Original oraz metody z konfiguracji (E_q i/lub E_x)."""
    data = generate(run.experiment, args.seed)
    ctx, cases = evaluation_cases(run, data)
    reports = [evaluate("Original", cases, ctx)]
    if run.method == "SysID":
        path = args.out_dir / SYSID_OPT_FILE
        if not path.exists():
            raise ArtifactError(str(path))
        opt = SysIdReport.model_validate_json(path.read_text())
        material = ctx.material.with_elasticity(opt.youngs_modulus, opt.poissons_ratio)
        reports.append(evaluate("SysID", cases, ctx, material=material))
    elif run.method in ("ResPhys", "SimFree"):
        directory = CHECKPOINT_DIR if run.method == "ResPhys" else SIMFREE_CHECKPOINT_DIR
        model, _ = load_checkpoint(args.out_dir / directory)
        reports.append(evaluate(run.method, cases, ctx, model=model))
    summary_path, curves_path = write_metrics(args.out_dir / "metrics", reports)
    try:
        from resphys.experiments.plots import render_error_curves

        metric = "E_x" if data.marker_layout is not None else "E_q"
        render_error_curves(pd.read_csv(curves_path), args.out_dir / "metrics" / "curves.png", metric)
    except ImportError as exc:
        logger.info("skipping error curve plot: %s", exc)
    return {"summary": str(summary_path), **{r.method: {"E_q": r.E_q, "E_x": r.E_x} for r in reports}}


# Command registry (positional subcommand arg)
COMMANDS: dict[str, Callable[[RunConfig, argparse.Namespace], dict]] = {
    "simulate": cmd_simulate,
    "gen": cmd_gen,
    "fit": cmd_fit,
    "train": cmd_train,
    "rollout": cmd_rollout,
    "sysid": cmd_sysid,
    "ablate-markers": cmd_ablate_markers,
    "eval": cmd_eval,
}


def parse_args(argv: Optional[list[str]] = None):
    """Parse command line arguments.

    First positional argument is the subcommand, second the JSON config path.
    """
    parser = argparse.ArgumentParser(
        description="resphys - symulator FEM z fizyką rezydualną"
    )
    parser.add_argument(
        "command",
        choices=list(COMMANDS),
        help="Polecenie do wykonania.",
    )
    parser.add_argument(
        "config",
        type=str,
        help="Ścieżka do pliku JSON z konfiguracją (RunConfig); brakujące sekcje przyjmują wartości domyślne.",
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=DEFAULT_SEED,
        help="Globalny seed (domyślnie: ENV RESPHYS_SEED lub 0).",
    )
    parser.add_argument(
        "--jobs",
        type=int,
        default=DEFAULT_JOBS,
        help="Liczba procesów roboczych (domyślnie: ENV RESPHYS_JOBS lub 1).",
    )
    parser.add_argument(
        "--out-dir",
        type=Path,
        default=Path(DEFAULT_OUT_DIR),
        help="Katalog wyjściowy (domyślnie: ENV RESPHYS_OUT_DIR lub out).",
    )
    parser.add_argument(
        "--simfree",
        action="store_true",
        help="train: wytrenuj także baseline SimFree.",
    )
    return parser.parse_args(argv)


def main(argv: Optional[list[str]] = None) -> int:
    setup_logging(DEFAULT_LOG_LEVEL)
    args = parse_args(argv)
    try:
        run = load_config(args.config)
        args.out_dir.mkdir(parents=True, exist_ok=True)
        logger.info("resphys %s (config=%s, seed=%d, jobs=%d)", args.command, args.config, args.seed, args.jobs)
        result = COMMANDS[args.command](run, args)
    except (ResPhysError, ValidationError) as exc:
        # Jedna linia JSON na stderr, czytelna maszynowo
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
