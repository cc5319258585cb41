"""Command-line entry point: ``acgen <command> [options]``.

Commands run pipeline stages against one run directory. Options mirror the
config file fields and override them. Errors are printed to stderr as a JSON
object and the process exits non-zero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Sequence

from .errors import AcgenError
from .generation import Ablation, TemplateKind
from .pipeline import Pipeline, load_config
from .retrieval import TextStrategy, VisualVariant
from .reward import ScorerKind

COMMANDS = ("index", "generate", "polish", "eval-retrieval", "eval-acs", "report", "run", "run-id")


def _values(enum) -> list[str]:
    return [e.value for e in enum]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acgen", description="Retrieval-augmented acceptance criteria pipeline.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("-c", "--config", help="YAML pipeline config")
    parser.add_argument("--run-id", help="address an existing run instead of deriving the id from the config")
    parser.add_argument("-v", "--verbose", action="count", default=0)

    paths = parser.add_argument_group("paths")
    paths.add_argument("--dataset")
    paths.add_argument("--cache-dir")
    paths.add_argument("--run-dir")
    paths.add_argument("--prompts", help="prompt template YAML")
    paths.add_argument("--cache-mode", choices=["record", "strict"])

    retrieval = parser.add_argument_group("retrieval")
    retrieval.add_argument("-k", "--k", type=int)
    retrieval.add_argument("--text-strategy", choices=_values(TextStrategy))
    retrieval.add_argument("--visual-variant", choices=_values(VisualVariant))

    generation = parser.add_argument_group("generation")
    generation.add_argument("--template", choices=_values(TemplateKind))
    generation.add_argument("--ablation", choices=_values(Ablation))
    generation.add_argument("--max-prompt-chars", type=int)
    generation.add_argument("--temperature", type=float)

    polish = parser.add_argument_group("polish")
    polish.add_argument("--threshold", type=int)
    polish.add_argument("--max-rounds", type=int)
    polish.add_argument("--scorer", choices=_values(ScorerKind))
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    overrides = {
        "dataset": args.dataset, "cache_dir": args.cache_dir, "run_dir": args.run_dir, "prompts": args.prompts,
        "cache_mode": args.cache_mode, "k": args.k, "text_strategy": args.text_strategy,
        "visual_variant": args.visual_variant, "template": args.template, "ablation": args.ablation,
        "max_prompt_chars": args.max_prompt_chars, "temperature": args.temperature,
        "threshold": args.threshold, "max_rounds": args.max_rounds, "scorer": args.scorer,
    }
    try:
        pipeline = Pipeline(load_config(args.config, overrides), run_id=args.run_id)
        if args.command == "run-id":
            print(pipeline.run_id)
            return 0
        command = {
            "index": pipeline.cmd_index,
            "generate": pipeline.cmd_generate,
            "polish": pipeline.cmd_polish,
            "eval-retrieval": pipeline.cmd_eval_retrieval,
            "eval-acs": pipeline.cmd_eval_acs,
            "report": pipeline.cmd_report,
            "run": pipeline.cmd_run,
        }[args.command]
        command()
    except AcgenError as exc:
        print(json.dumps(exc.to_dict(), sort_keys=True), file=sys.stderr)
        return 1
    if args.command in ("report", "run"):
        sys.stdout.write((pipeline.run_path / "report.txt").read_text(encoding="utf-8"))
    else:
        print(f"{args.command}: ok ({pipeline.run_path})")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
