#!/usr/bin/env python
"""
Main entry point for deferkit

This script provides a command-line interface for generating data,
training deferral systems, attacking and evaluating them, and running
the verification suite.
"""
import os
import sys
import json
import argparse
import logging

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler(),
        logging.FileHandler('deferkit.log')
    ]
)
logger = logging.getLogger(__name__)

# Add the project directory to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))


def _load(args):
    from deferkit.config import load_config
    return load_config(args.config, args.set)


def run_gen(args):
    """Generate the dataset and expert outputs."""
    from deferkit.commands import cmd_gen

    cfg = _load(args)
    logger.info(f"Generating data for experiment: {cfg.name}")
    paths = cmd_gen(cfg)
    logger.info(f"Data written to: {paths['dataset']}")
    return paths


def run_train(args):
    """Train a deferral system."""
    from deferkit.commands import cmd_train

    cfg = _load(args)
    logger.info(f"Training {cfg.train.objective} for experiment: {cfg.name}")
    result = cmd_train(cfg)
    logger.info(f"Training complete. Checkpoint saved to: {result['checkpoint']}")
    return result


def run_attack(args):
    """Dump adversarial examples against a trained system."""
    from deferkit.commands import cmd_attack

    cfg = _load(args)
    logger.info(f"Attacking checkpoint: {args.checkpoint or 'default'}")
    return cmd_attack(cfg, args.checkpoint)


def run_eval(args):
    """Evaluate a trained system under every configured attack mode."""
    from deferkit.commands import cmd_eval

    cfg = _load(args)
    logger.info(f"Evaluating modes {cfg.eval.modes} on the {cfg.eval.split} split")
    paths = cmd_eval(cfg, args.checkpoint)
    logger.info(f"Metric reports saved: {', '.join(paths.values())}")
    return paths


def run_verify(args):
    """Run the verification suite."""
    from deferkit.commands import cmd_verify
    from deferkit.oracle.verify import format_verification_summary

    cfg = _load(args)
    results = cmd_verify(cfg)
    print(format_verification_summary(results))

    if results['success']:
        logger.info("Verification passed! All checks successful.")
    else:
        logger.warning(f"Verification failed! {results['statistics']['unsuccessful_checks']} checks failed.")
    return results


def run_report(args):
    """Collect metric reports into one table."""
    from deferkit.commands import cmd_report

    cfg = _load(args)
    frame = cmd_report(cfg, args.reports)
    print(frame.to_string(index=False))
    return frame


def _error_document(error: Exception) -> str:
    from deferkit.errors import DeferkitError

    details = error.details() if isinstance(error, DeferkitError) else {}
    return json.dumps({"error": type(error).__name__, "message": str(error), "details": details})


def main(argv=None):
    """Main entry point."""
    parser = argparse.ArgumentParser(description="Adversarially robust learning-to-defer")
    subparsers = parser.add_subparsers(dest="command", help="Command to run")

    def add_common(sub):
        sub.add_argument("--config", default="config.json", help="Path to the experiment config (JSON or YAML)")
        sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         help="Override a config field with a dotted path, e.g. loss.gamma=0.5")

    # Data command
    gen_parser = subparsers.add_parser("gen", help="Generate dataset and expert outputs")
    add_common(gen_parser)

    # Training command
    train_parser = subparsers.add_parser("train", help="Train a deferral system")
    add_common(train_parser)

    # Attack command
    attack_parser = subparsers.add_parser("attack", help="Dump adversarial examples")
    add_common(attack_parser)
    attack_parser.add_argument("--checkpoint", help="Checkpoint to attack (default: <output_dir>/checkpoint.json)")

    # Evaluation command
    eval_parser = subparsers.add_parser("eval", help="Evaluate clean and adversarial metrics")
    add_common(eval_parser)
    eval_parser.add_argument("--checkpoint", help="Checkpoint to evaluate (default: <output_dir>/checkpoint.json)")

    # Verification command
    verify_parser = subparsers.add_parser("verify", help="Run the verification suite")
    add_common(verify_parser)

    # Report command
    report_parser = subparsers.add_parser("report", help="Tabulate metric reports")
    add_common(report_parser)
    report_parser.add_argument("reports", nargs="*", help="Report JSON files (default: <output_dir>/metrics_*.json)")

    # Pipeline command (runs all steps)
    pipeline_parser = subparsers.add_parser("pipeline", help="Run gen, train, eval and verify")
    add_common(pipeline_parser)

    args = parser.parse_args(argv)

    from deferkit.errors import ConfigurationError, DeferkitError

    try:
        if args.command == "gen":
            run_gen(args)
        elif args.command == "train":
            run_train(args)
        elif args.command == "attack":
            run_attack(args)
        elif args.command == "eval":
            run_eval(args)
        elif args.command == "verify":
            results = run_verify(args)
            return 0 if results['success'] else 1
        elif args.command == "report":
            run_report(args)
        elif args.command == "pipeline":
            logger.info("Running full pipeline")
            args.checkpoint = None
            run_gen(args)
            run_train(args)
            run_eval(args)
            results = run_verify(args)
            logger.info("Pipeline completed")
            return 0 if results['success'] else 1
        else:
            parser.print_help()
            return 0
    except ConfigurationError as e:
        logger.error(f"Configuration error: {e}")
        print(_error_document(e), file=sys.stderr)
        return 2
    except DeferkitError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(_error_document(e), file=sys.stderr)
        return 1
    except Exception as e:
        logger.error(f"Unexpected {type(e).__name__}: {e}")
        print(_error_document(e), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
