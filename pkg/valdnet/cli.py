"""Command-line entry point: synthesize data, precompute flow, train, evaluate, predict and verify.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric failure.
"""
import argparse
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

from .config import ModelConfig, TrainConfig, load_config
from .data import Manifest, VideoSample, load_manifest, save_manifest, uniform_sample_indices
from .errors import ConfigError, ContractError, DataError, DimensionError, FormatError, LockError, NumericError
from .gradcheck import run_suite
from .loader import flow_source_for, load_sample, precompute_flows
from .model import predict, variant_name
from .synthetic import generate_synthetic, split_dataset
from .train import CONFIG_FILE, WEIGHTS_FILE, evaluate, run_variants, train
from .types.shared import CELL_TYPES
from .weights import WeightStore

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

LOCK_FILE = ".valdnet.lock"
MANIFEST_FILE = "manifest.json"

Message = tuple[str, str, str]


def show_message(message: str = "", title: str = "valdnet", level: str = 'INFO'):
    logger.log(logging.getLevelName(level), "%s: %s", title, message)


def check_seed(args: argparse.Namespace) -> tuple[bool, Message | None]:
    passed = True
    msg = None
    if args.seed is None:
        passed = False
        msg = (f"`{args.command}` needs --seed so that the run is reproducible", "Usage", 'ERROR')

    return passed, msg


def check_existing_file(path: Path, what: str) -> tuple[bool, Message | None]:
    passed = True
    msg = None
    if not path.is_file():
        passed = False
        msg = (f"No {what} at {path}", "Error", 'ERROR')

    return passed, msg


@contextmanager
def output_lock(out: Path):
    """Hold `<out>/.valdnet.lock` for the duration of a command that writes into `out`"""
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK_FILE
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"{out} is in use by another valdnet process (remove {lock} if it is stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode("ascii"))
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with \"model\" and \"train\" sections")
    common.add_argument("--seed", type=int, help="Seed for generation, weight init and shuffling")
    common.add_argument("--out", type=Path, default=Path("."), help="Output directory (default: current directory)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override a config value, e.g. train.epochs=5 (repeatable)")
    common.add_argument("--offset", type=int, choices=(1, 2, 3), help="Flow offset k (ValdNet1/2/3)")
    common.add_argument("--cell", choices=CELL_TYPES, help="Recurrent cell")
    common.add_argument("--manifest", type=Path, help="Dataset manifest (default: <out>/manifest.json)")
    common.add_argument("--weights", type=Path, help="VLDW weight file (default: <out>/weights.vldw)")
    common.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))

    parser = ArgumentParser(prog="valdnet", description="Two-stream violence detection at desk scale")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    gen = commands.add_parser("gen-synth", parents=[common], help="Generate and split the synthetic motion dataset")
    gen.add_argument("--per-class", type=int, default=100, help="Clips per class (default: 100)")
    gen.add_argument("--frames", type=int, default=24, help="Frames per clip (default: 24)")
    gen.add_argument("--size", type=int, help="Frame size (default: the model input size)")

    commands.add_parser("flow", parents=[common], help="Precompute .flo files for a manifest at the flow offset")
    commands.add_parser("train", parents=[common], help="Train and write weights, metrics and the resolved config")
    commands.add_parser("eval", parents=[common], help="Evaluate weights on the eval split")

    pred = commands.add_parser("predict", parents=[common], help="Print the probability and label of one clip")
    pred.add_argument("sample", help="Sample id from the manifest, or a directory of .ppm frames")

    indices = commands.add_parser("sample-indices", parents=[common], help="Print the uniform frame sampler output")
    indices.add_argument("total", type=int, metavar="N")
    indices.add_argument("count", type=int, metavar="K")

    commands.add_parser("gradcheck", parents=[common], help="Run the finite-difference gradient suite")
    commands.add_parser("variants", parents=[common], help="Train all six offset/cell variants")
    return parser


def resolve_config(args: argparse.Namespace, fallback: Path | None = None) -> tuple[ModelConfig, TrainConfig]:
    """defaults < config file < --set < dedicated flags"""
    path = args.config
    if path is None and fallback is not None and fallback.is_file():
        path = fallback
        logger.debug("Using config from %s", path)
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    if args.offset is not None:
        overrides.append(f"model.flow_offset={args.offset}")
    if args.cell is not None:
        overrides.append(f"model.rnn_cell={args.cell}")
    return load_config(path, overrides)


def manifest_path(args: argparse.Namespace) -> Path:
    return args.manifest or args.out / MANIFEST_FILE


def weights_path(args: argparse.Namespace) -> Path:
    return args.weights or args.out / WEIGHTS_FILE


def _load_manifest(args: argparse.Namespace) -> tuple[Manifest, Path] | None:
    path = manifest_path(args)
    result, msg = check_existing_file(path, "manifest")
    if not result and msg:
        show_message(*msg)
        return None
    return load_manifest(path), path


def cmd_gen_synth(args: argparse.Namespace) -> int:
    model, train_config = resolve_config(args)
    size = args.size or model.input_size
    with output_lock(args.out):
        manifest = generate_synthetic(args.out, train_config.seed, args.per_class, args.frames, size)
        manifest = split_dataset(manifest, train_config.seed)
        save_manifest(manifest, args.out / MANIFEST_FILE)
    show_message(f"{len(manifest.samples)} clips written to {args.out}", "gen-synth")
    return EXIT_OK


def cmd_flow(args: argparse.Namespace) -> int:
    model, _ = resolve_config(args)
    loaded = _load_manifest(args)
    if loaded is None:
        return EXIT_DATA
    manifest, path = loaded
    with output_lock(args.out):
        manifest = precompute_flows(manifest, args.out, model.flow_offset, model.input_size)
        save_manifest(manifest, path)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    model, train_config = resolve_config(args)
    loaded = _load_manifest(args)
    if loaded is None:
        return EXIT_DATA
    with output_lock(args.out):
        start_time = time.perf_counter()
        result = train(loaded[0], model, train_config, out_dir=args.out)
    final = result.metrics[-1]
    show_message(f"{variant_name(model)} finished in {time.perf_counter() - start_time:.1f}s, "
                 f"eval accuracy {final['eval_acc']:.6f}", "train")
    return EXIT_OK


def _load_weights(args: argparse.Namespace) -> WeightStore | None:
    path = weights_path(args)
    result, msg = check_existing_file(path, "weight file")
    if not result and msg:
        show_message(*msg)
        return None
    return WeightStore.load(path)


def cmd_eval(args: argparse.Namespace) -> int:
    weights = _load_weights(args)
    if weights is None:
        return EXIT_DATA
    model, train_config = resolve_config(args, fallback=weights_path(args).parent / CONFIG_FILE)
    loaded = _load_manifest(args)
    if loaded is None:
        return EXIT_DATA
    evaluation = evaluate(loaded[0], weights, model, train_config.threshold)
    print(f"eval_loss={evaluation.loss:.6f} eval_acc={evaluation.accuracy:.6f}")
    return EXIT_OK


def _find_sample(args: argparse.Namespace) -> tuple[VideoSample, Manifest | None] | None:
    folder = Path(args.sample)
    if folder.is_dir():
        frames = sorted(folder.glob("*.ppm"))
        if not frames:
            show_message(f"No .ppm frames in {folder}", "Error", 'ERROR')
            return None
        return VideoSample(id=folder.name, label=0, frames=frames), None

    loaded = _load_manifest(args)
    if loaded is None:
        return None
    manifest = loaded[0]
    for sample in manifest.samples:
        if sample.id == args.sample:
            return sample, manifest
    show_message(f"Manifest {manifest.name!r} has no sample {args.sample!r}", "Error", 'ERROR')
    return None


def cmd_predict(args: argparse.Namespace) -> int:
    weights = _load_weights(args)
    if weights is None:
        return EXIT_DATA
    model, train_config = resolve_config(args, fallback=weights_path(args).parent / CONFIG_FILE)
    found = _find_sample(args)
    if found is None:
        return EXIT_DATA
    sample, manifest = found
    source = flow_source_for(manifest or Manifest(name=sample.id, frame_size=model.input_size), model.flow_offset)
    prediction = predict(load_sample(sample, model, source), weights, model, train_config.threshold)
    print(f"{prediction.id} probability={prediction.probability:.6f} label={prediction.label}")
    return EXIT_OK


def cmd_sample_indices(args: argparse.Namespace) -> int:
    print(",".join(str(i) for i in uniform_sample_indices(args.total, args.count)))
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_suite(seed=args.seed or 0)
    failed = [result.name for result in results if not result.passed]
    if failed:
        show_message(f"{len(failed)} of {len(results)} gradient checks failed: {', '.join(failed)}", "gradcheck",
                     'ERROR')
        return EXIT_NUMERIC
    show_message(f"All {len(results)} gradient checks passed", "gradcheck")
    return EXIT_OK


def cmd_variants(args: argparse.Namespace) -> int:
    model, train_config = resolve_config(args)
    loaded = _load_manifest(args)
    if loaded is None:
        return EXIT_DATA
    with output_lock(args.out):
        results = run_variants(loaded[0], model, train_config, args.out)
    for result in results:
        print(f"{result.name}: eval_acc={result.eval_accuracy:.6f} eval_loss={result.eval_loss:.6f}")
    return EXIT_OK


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "flow": cmd_flow,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "sample-indices": cmd_sample_indices,
    "gradcheck": cmd_gradcheck,
    "variants": cmd_variants,
}

SEEDED_COMMANDS = ("gen-synth", "train", "variants")


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", force=True)

    if args.command in SEEDED_COMMANDS:
        result, msg = check_seed(args)
        if not result and msg:
            show_message(*msg)
            return EXIT_USAGE

    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ContractError) as e:
        show_message(str(e), "Usage", 'ERROR')
        return EXIT_USAGE
    except (FormatError, DataError, DimensionError, LockError, OSError) as e:
        show_message(str(e), "Error", 'ERROR')
        return EXIT_DATA
    except NumericError as e:
        show_message(str(e), "Numeric failure", 'ERROR')
        return EXIT_NUMERIC


def main() -> int:
    return run(sys.argv[1:])
