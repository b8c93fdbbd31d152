"""Command-line entry point for the volumetric vision-language experiment."""
import argparse
import json
import logging
import os
import sys
from pathlib import Path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from pydantic import ValidationError

from config.experiment import ABLATIONS, ConfigurationError, ExperimentConfig
from config.log_setup import configure_logging
from config.settings import settings
from connectors.artifact_store import ChecksumMismatchError, MissingArtifactError
from pipeline.stages import STAGE_NAMES, run_stage
from voltok.training import TrainingDivergedError

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Volumetric study / report contrastive pretraining pipeline')
    parser.add_argument('--config', type=Path, help='experiment config JSON (defaults apply when omitted)')
    parser.add_argument('--seed', type=int, help='override the config seed')
    parser.add_argument('--stage', choices=STAGE_NAMES, default='all')
    parser.add_argument('--run-dir', type=Path, default=settings.RUNS_DIR,
                        help='root of the run store (runs/<run-id>/ is created below it)')
    parser.add_argument('--resume', action='store_true', help='skip stages whose inputs and outputs are unchanged')
    parser.add_argument('--ablation', choices=ABLATIONS,
                        help='design toggle: compared to baseline by "ablate", applied to the config otherwise')
    parser.add_argument('--progress', action='store_true', help='show training progress bars')
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.ablation and args.stage != 'ablate':
        cfg = cfg.with_ablation(args.ablation)
    return cfg


def _print_summary(summary: dict) -> None:
    for key, value in summary.items():
        if isinstance(value, (dict, list)):
            text = json.dumps(value, default=float)
            value = text if len(text) <= 100 else text[:97] + '...'
        elif isinstance(value, float):
            value = f'{value:.4f}'
        print(f'  {key}: {value}')


def run(args: argparse.Namespace) -> bool:
    """
    Run the requested stage and print a human summary.

    Returns:
        True if the stage completed (or was skipped as up to date), False otherwise
    """
    print("=" * 60)
    print("Volumetric Vision-Language Pretraining")
    print("=" * 60)

    try:
        cfg = load_config(args)
    except (OSError, ValidationError, ConfigurationError) as e:
        print(f"❌ Invalid configuration: {e}")
        return False

    log_file = configure_logging(settings.LOG_DIR)
    print(f"\n📦 Run {cfg.run_id} (seed {cfg.seed}) under {args.run_dir}")
    print(f"  Log: {log_file}")
    print(f"\n🚀 Stage: {args.stage}")

    try:
        result = run_stage(args.stage, cfg, runs_dir=args.run_dir, resume=args.resume, ablation=args.ablation,
                           show_progress=args.progress)
    except MissingArtifactError as e:
        print(f"❌ {e}")
        print(f"  Run: python main.py --stage {e.stage}" + (f" --config {args.config}" if args.config else ''))
        return False
    except (ConfigurationError, ChecksumMismatchError) as e:
        print(f"❌ {e}")
        return False
    except TrainingDivergedError as e:
        print(f"❌ {e}")
        return False
    except Exception as e:
        logger.error(f"Stage {args.stage} failed: {e}", exc_info=True)
        print(f"❌ Error in stage {args.stage}: {e}")
        return False

    if result.skipped:
        print(f"✓ {result.stage} is up to date; nothing to do")
    else:
        print(f"✓ {result.stage} completed ({len(result.outputs)} artifacts)")
        if args.stage == 'all':
            for name, summary in result.summary.items():
                print(f"\n📊 {name}")
                _print_summary(summary)
        else:
            _print_summary(result.summary)
    print("=" * 60)
    return True


def main():
    """CLI entry point."""
    args = build_parser().parse_args()
    success = run(args)
    sys.exit(0 if success else 1)


if __name__ == "__main__":
    main()
