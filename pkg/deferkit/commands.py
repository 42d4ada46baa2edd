"""
Pipeline commands

Each command takes a validated ExperimentConfig, runs one stage and writes
its outputs under the config's output directory. Every output embeds the
config hash.
"""
import glob
import json
import logging
import os
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from deferkit.agents.experts import export_cache
from deferkit.attacks.proxies import dump_adversarial
from deferkit.attacks.threats import clean_surrogate_objective, targeted_attack, untargeted_attack
from deferkit.config import (ExperimentConfig, build_ball, build_cost_model, build_dataset, build_panel,
                             build_params, build_system, config_hash, output_dir)
from deferkit.diffcore import tensor as T
from deferkit.diffcore.model import forward, load_checkpoint, save_checkpoint
from deferkit.errors import CheckpointError
from deferkit.evaluation.metrics import evaluate, resolve_nu, summarize_reports
from deferkit.evaluation.reports import emit_report, load_report, reports_frame
from deferkit.oracle.verify import run_verification
from deferkit.surrogates.clean import phi_u_batch
from deferkit.systems import system_from_models
from deferkit.training.trainer import train_baseline, train_rerm_c, train_rerm_r

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.json"


def _path(cfg: ExperimentConfig, name: str) -> str:
    directory = output_dir(cfg)
    os.makedirs(directory, exist_ok=True)
    return os.path.join(directory, name)


def _prepare(cfg: ExperimentConfig):
    dataset = build_dataset(cfg)
    panel = build_panel(cfg, dataset)
    cm = build_cost_model(cfg, dataset.num_classes)
    return dataset, panel, cm


def load_system(cfg: ExperimentConfig, checkpoint: Optional[str] = None):
    """Rebuild the trained system from a checkpoint written by cmd_train."""
    checkpoint = checkpoint or _path(cfg, CHECKPOINT_NAME)
    models, document = load_checkpoint(checkpoint, task=cfg.task)
    stored = document.get("config_hash")
    if stored and stored != config_hash(cfg):
        logger.warning(f"Checkpoint {checkpoint} was trained under config {stored}, "
                       f"evaluating under {config_hash(cfg)}")
    extra = document.get("extra", {})
    if extra.get("num_experts") != cfg.num_experts:
        raise CheckpointError(f"checkpoint has {extra.get('num_experts')} experts, config has {cfg.num_experts}")
    return system_from_models(cfg.task, models, extra.get("num_classes", 0), cfg.num_experts)


def cmd_gen(cfg: ExperimentConfig) -> Dict[str, str]:
    """Write the dataset and the sampled expert outputs as CSV."""
    run_id = config_hash(cfg)
    dataset = build_dataset(cfg)
    panel = build_panel(cfg, dataset)
    paths = {
        "dataset": dataset.save_csv(_path(cfg, "dataset.csv"), run_id),
        "experts": export_cache(panel, _path(cfg, "experts.csv"), run_id),
    }
    logger.info(f"Generated {dataset.n} examples ({dataset.train_idx.size} train, {dataset.test_idx.size} test)")
    return paths


def cmd_train(cfg: ExperimentConfig) -> Dict[str, Any]:
    """
    Train the system named by ``train.objective``.

    Writes ``checkpoint.json`` and ``manifest.json``. Neither file carries a
    timestamp, so retraining with the same config reproduces both byte for byte.
    """
    run_id = config_hash(cfg)
    dataset, panel, cm = _prepare(cfg)
    system = build_system(cfg, dataset)
    params, ball, plan = build_params(cfg), build_ball(cfg), cfg.attack
    objective = cfg.train.objective

    if objective == "rerm_c":
        h, history = train_rerm_c(system.h, dataset, panel, cm, params, ball, plan, cfg.train)
        system.h = h
    elif objective == "rerm_r":
        (r, f), history = train_rerm_r(system.r, system.f, dataset, panel, cm, params, ball, plan, cfg.train)
        system.r, system.f = r, f
    else:
        system, history = train_baseline(system, dataset, panel, cm, cfg.train, u=params.u)

    extra = {"num_classes": dataset.num_classes, "num_experts": cfg.num_experts}
    checkpoint = save_checkpoint(_path(cfg, CHECKPOINT_NAME), system.models(), cfg.task, run_id, extra)
    manifest = {
        "config_hash": run_id,
        "name": cfg.name,
        "task": cfg.task,
        "objective": objective,
        "checkpoint": os.path.basename(checkpoint),
        "fingerprints": {name: m.fingerprint() for name, m in sorted(system.models().items())},
        "history": history,
        "config": cfg.model_dump(mode="json"),
    }
    manifest_path = _path(cfg, "manifest.json")
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info(f"Training manifest saved to: {manifest_path}")
    return {"checkpoint": checkpoint, "manifest": manifest_path, "history": history}


def cmd_attack(cfg: ExperimentConfig, checkpoint: Optional[str] = None) -> Dict[str, str]:
    """
    Attack every example of the evaluation split and dump the adversarial inputs.

    One CSV per attack mode in ``eval.modes`` (clean is skipped); ``outcome`` is
    the decision at the perturbed input.
    """
    run_id = config_hash(cfg)
    dataset, panel, cm = _prepare(cfg)
    system = load_system(cfg, checkpoint)
    params, ball, plan = build_params(cfg), build_ball(cfg), cfg.attack
    idx, X, targets = dataset.split(cfg.eval.split)
    m = panel.outputs(idx)
    policy = system.policy
    paths = {}

    for mode in cfg.eval.modes:
        if mode == "clean":
            continue
        if mode == "untargeted":
            adv = untargeted_attack(system, X, targets, m, cm, params, ball, plan)
            values = clean_surrogate_objective(system, targets, m, cm, params)(T.constant(adv)).value
        else:
            nu = resolve_nu(cfg.eval.nu, policy.output_dim)
            adv, _ = targeted_attack(policy, X, nu, ball, plan, u=params.u)
            values = phi_u_batch(forward(policy, adv), np.full(idx.size, nu), params.u).value
        outcomes = np.argmax(policy.scores(adv), axis=1)
        norms = ball.distance(adv, X)
        rows = [{"example_id": int(i), "outcome": int(o), "delta_norm": float(dn), "objective_value": float(v)}
                for i, o, dn, v in zip(idx, outcomes, norms, values)]
        paths[mode] = dump_adversarial(rows, _path(cfg, f"adversarial_{mode}.csv"), run_id)
    return paths


def cmd_eval(cfg: ExperimentConfig, checkpoint: Optional[str] = None) -> Dict[str, str]:
    """One MetricReport per mode in ``eval.modes`` plus their summary row."""
    run_id = config_hash(cfg)
    dataset, panel, cm = _prepare(cfg)
    system = load_system(cfg, checkpoint)
    params, ball, plan = build_params(cfg), build_ball(cfg), cfg.attack
    reports = []
    paths = {}
    for mode in cfg.eval.modes:
        report = evaluate(system, dataset, panel, cm, attack_mode=mode, ball=ball, plan=plan, params=params,
                          nu=cfg.eval.nu, split=cfg.eval.split, config_hash=run_id)
        paths[mode], _ = emit_report(report, _path(cfg, f"metrics_{mode}.json"))
        reports.append(report)
    if reports:
        paths["summary"], _ = emit_report(summarize_reports(reports), _path(cfg, "metrics_summary.json"))
    return paths


def cmd_verify(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Run the oracle checks and save ``verification.json``."""
    return run_verification(cfg.verify, _path(cfg, "verification.json"), config_hash(cfg))


def cmd_report(cfg: ExperimentConfig, paths: Optional[List[str]] = None) -> pd.DataFrame:
    """
    Collect metric reports into one table and save it as ``report.csv``.

    Args:
        cfg (ExperimentConfig): Experiment whose output directory holds the reports
        paths (Optional[List[str]]): Report JSON files; every metrics_*.json when omitted

    Returns:
        DataFrame: One row per report
    """
    paths = paths or sorted(glob.glob(os.path.join(output_dir(cfg), "metrics_*.json")))
    frame = reports_frame([load_report(p) for p in paths])
    target = _path(cfg, "report.csv")
    with open(target, "w") as f:
        f.write(f"# config_hash={config_hash(cfg)}\n")
        frame.to_csv(f, index=False)
    logger.info(f"Report table saved to: {target} ({len(frame)} rows)")
    return frame
