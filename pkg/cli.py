#!/usr/bin/env python3
"""
Command Line Interface for qattr

Trains quantum classifiers, computes integrated-gradients attributions
for them and checks the Hadamard-test gradient estimators against the
exact gradient.

Exit codes: 0 ok, 2 configuration, 3 file I/O, 4 numerical, 1 anything else.
Errors are also written to stderr as one JSON object.
"""

import argparse
import json
import sys
import time
import traceback
from dataclasses import replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from attribution_analyzer import (
    AttributionConfig, AttributionMap, AttributionSpace, attribution_mass_concentration,
    attribution_similarity, integrated_gradients, normalize_for_render,
)
from console import fail, say, set_quiet, warn
from dataset_loader import (
    DatasetName, DatasetSpec, LabeledSample, SplitSpec, TaskSplit, download_idx_files,
    find_benchmark_task, load_samples, load_task, save_samples,
)
from errors import (
    EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, ConfigError, DatasetError, EncodingError, QAttrError,
)
from feature_encoding import EncodingKind, FitPolicy, fit_encoding_mode
from gradient_engine import (
    GradientBackend, GradientMethod, component_standard_errors, exact_input_gradient,
)
from heatmap_renderer import grid_shape, render_heatmap, save_ppm
from quantum_model import Activation, AnsatzSpec, PauliObservable, QuantumModel, encode_for_model
from run_config import RunConfig, resolve, write_json
from statevector_simulator import derive_seed
from trainer import (
    NullDistribution, NullKind, SPSAGains, TrainConfig, evaluate_accuracy, initial_model,
    model_features, sample_null_model, train,
)

NATIVE_SIDES = {DatasetName.NIST8X8: 8, DatasetName.MNIST: 28, DatasetName.FASHION_MNIST: 28}
EXACT_TOLERANCE = 1e-8


# Shared helpers -----------------------------------------------------------

def _dataset_spec(cfg: RunConfig) -> DatasetSpec:
    try:
        name = DatasetName(cfg["dataset"])
        side = NATIVE_SIDES.get(name, cfg["image_side"])
        spec = DatasetSpec(
            name=name,
            class_pair=tuple(str(c) for c in cfg["class_pair"]),
            image_side=side,
            split=SplitSpec(float(cfg["train_fraction"]), cfg.seed),
            subsample=cfg.get("subsample"),
            label_map=cfg.get("label_map"),
        )
        spec.resolved_label_map()
        return spec
    except DatasetError as e:
        raise ConfigError(e.message, field="class_pair")


def _task(cfg: RunConfig) -> Tuple[DatasetSpec, TaskSplit]:
    spec = _dataset_spec(cfg)
    if cfg.get("download") and spec.name != DatasetName.BARS_AND_STRIPES:
        source = DatasetName.MNIST if spec.name == DatasetName.NIST8X8 else spec.name
        download_idx_files(source, cfg.data_dir)
    return spec, load_task(spec, cfg.data_dir)


def _required(cfg: RunConfig, key: str) -> Any:
    value = cfg.get(key)
    if value is None:
        raise ConfigError(f"{cfg.subcommand} needs --{key.replace('_', '-')}", field=key)
    return value


def _load_inputs(cfg: RunConfig) -> Tuple[QuantumModel, List[LabeledSample]]:
    model = QuantumModel.load(_required(cfg, "model"))
    samples = load_samples(_required(cfg, "data"))
    return model, samples


def _select(samples: Sequence[LabeledSample], indices: Sequence[int],
            key: str = "samples") -> List[LabeledSample]:
    chosen = []
    for index in indices:
        if not 0 <= index < len(samples):
            raise ConfigError(f"sample index {index} out of range (file has {len(samples)})",
                              field=key)
        chosen.append(samples[index])
    return chosen


def _attribution_config(cfg: RunConfig, **changes: Any) -> AttributionConfig:
    shots = cfg.get("shots")
    config = AttributionConfig(
        baseline=np.asarray(cfg["baseline"], dtype=float) if cfg.get("baseline") is not None else None,
        path_steps=cfg["path_steps"],
        gradient_method=GradientMethod(cfg.get("gradient_method", "exact")),
        shots=shots if isinstance(shots, int) else None,
        ancillas=cfg.get("ancillas", 1) if isinstance(cfg.get("ancillas", 1), int) else 1,
        seed=cfg.seed,
        space=AttributionSpace(cfg["space"]),
        workers=cfg["workers"],
    )
    return replace(config, **changes) if changes else config


def _render(cfg: RunConfig, name: str, amap: AttributionMap,
            sample: LabeledSample) -> None:
    """Write the map's JSON and heatmap under `name`."""
    amap.save(cfg.output_path(f"{name}.json"))
    normalized, all_zero = normalize_for_render(amap)
    if all_zero:
        warn(f"{name}: attribution is all zero, heatmap will be white")
    # The grayscale panel only lines up when there is one score per pixel.
    rows, cols = grid_shape(len(normalized))
    panel = sample.pixels if len(sample.pixels) == len(normalized) and rows == cols else None
    image = render_heatmap(normalized, panel, rows if rows == cols else None, cfg["scale"])
    save_ppm(image, cfg.output_path(f"{name}.ppm"))


def _attribute_sample(cfg: RunConfig, model: QuantumModel, sample: LabeledSample,
                      config: AttributionConfig) -> AttributionMap:
    amap = integrated_gradients(model, model_features(model, sample.pixels), config)
    amap.metadata = {"sample_id": sample.id, "source_class": sample.source_class,
                     "label": sample.label}
    return amap


# Commands -------------------------------------------------------------------

def cmd_generate_data(cfg: RunConfig) -> Dict[str, Any]:
    spec, split = _task(cfg)
    save_samples(cfg.output_path("train.json"), split.train, spec, "train")
    save_samples(cfg.output_path("test.json"), split.test, spec, "test")
    say(f"📦 Wrote {len(split.train)} training and {len(split.test)} test samples "
        f"({spec.name.value}, {spec.class_pair[0]} vs {spec.class_pair[1]})")
    return {"dataset": spec.to_dict(), "counts": {"train": len(split.train), "test": len(split.test)}}


def _training_data(cfg: RunConfig) -> Tuple[Optional[DatasetSpec], List[LabeledSample],
                                             Optional[List[LabeledSample]]]:
    if cfg.get("train_data"):
        train_samples = load_samples(cfg["train_data"])
        test_samples = load_samples(cfg["test_data"]) if cfg.get("test_data") else None
        return None, train_samples, test_samples
    spec, split = _task(cfg)
    return spec, split.train, split.test or None


def cmd_train(cfg: RunConfig) -> Dict[str, Any]:
    spec, train_samples, test_samples = _training_data(cfg)
    if not train_samples:
        raise ConfigError("training set is empty", field="train_data")
    config = TrainConfig(
        optimizer=cfg["optimizer"],
        max_iters=cfg["max_iters"],
        learning_rate=float(cfg["learning_rate"]),
        gains=SPSAGains(**{k: float(v) for k, v in cfg["spsa"].items()}),
        init=NullDistribution(NullKind(cfg["init"]), seed=cfg.seed),
        seed=cfg.seed,
        log_every=cfg["log_every"],
    )
    if cfg.get("resume"):
        model = QuantumModel.load(cfg["resume"])
        say(f"↩️ Resuming from {cfg['resume']}")
    else:
        kind = EncodingKind(cfg["encoding"])
        feature_count = len(train_samples[0].pixels) if kind != EncodingKind.ANGLE else cfg["n_qubits"]
        try:
            mode = fit_encoding_mode(feature_count, cfg["n_qubits"], kind,
                                     FitPolicy(cfg["fit_policy"]))
        except EncodingError as e:
            raise ConfigError(e.message, field="n_qubits")
        if mode.n_qubits != cfg["n_qubits"]:
            warn(f"{feature_count} features need {mode.n_qubits} qubits; register grown")
        try:
            observable = PauliObservable.parse(cfg["observable"])
        except QAttrError as e:
            raise ConfigError(e.message, field="observable")
        model = initial_model(AnsatzSpec(mode.n_qubits, cfg["n_layers"]), config,
                              observable=observable, activation=Activation(cfg["activation"]),
                              encoding=mode)

    result = train(model, train_samples, config, test_samples, record_timing=cfg.record_timing)
    trained = result.model.with_metadata(dataset=spec.to_dict() if spec else cfg.get("train_data"))
    trained.save(cfg.output_path("model.json"))
    write_json(cfg.output_path("history.json"), result.to_dict())
    summary = {
        "training": config.to_dict(),
        "optimizer_note": f"{config.optimizer.value} used in place of COBYLA",
        "train_accuracy": result.train_accuracy,
        "test_accuracy": result.test_accuracy,
        "best_loss": result.best_loss,
    }
    benchmark = None
    if spec is not None:
        benchmark = find_benchmark_task(spec.name, spec.class_pair, trained.encoding.kind.value)
    if benchmark is not None:
        summary["benchmark"] = {"train_accuracy": benchmark.train_accuracy / 100,
                                "test_accuracy": benchmark.test_accuracy / 100,
                                "n_qubits": benchmark.n_qubits, "n_layers": benchmark.n_layers}
        say(f"📏 Benchmark accuracy for this task: train {benchmark.train_accuracy}%, "
            f"test {benchmark.test_accuracy}%")
    return summary


def cmd_evaluate(cfg: RunConfig) -> Dict[str, Any]:
    model, samples = _load_inputs(cfg)
    accuracy = evaluate_accuracy(model, samples)
    report = {"accuracy": accuracy, "count": len(samples)}
    write_json(cfg.output_path("evaluation.json"), report)
    say(f"🎯 Accuracy {accuracy:.3f} on {len(samples)} samples")
    return report


def cmd_attribute(cfg: RunConfig) -> Dict[str, Any]:
    model, samples = _load_inputs(cfg)
    config = _attribution_config(cfg)
    summary = []
    for sample in _select(samples, cfg["samples"]):
        say(f"🧭 Attributing sample {sample.id} ({sample.source_class})")
        amap = _attribute_sample(cfg, model, sample, config)
        _render(cfg, f"attribution_{sample.id}", amap, sample)
        summary.append({"sample_id": sample.id, "residual": amap.completeness_residual,
                        "relative_residual": amap.relative_residual})
    return {"attributions": summary}


def _gradcheck_row(cfg: RunConfig, model: QuantumModel, encoded, features: np.ndarray,
                   exact: np.ndarray, exact_map: AttributionMap, m: int,
                   shots: Optional[int]) -> Dict[str, Any]:
    method = GradientMethod.HADAMARD_SINGLE if m == 1 else GradientMethod.HADAMARD_MULTI
    backend = GradientBackend(method, shots, m, cfg["workers"])
    estimate = backend.input_gradient(model, encoded, cfg.seed).values
    errors = np.abs(estimate - exact)
    if shots is None:
        tolerance = np.full(len(exact), EXACT_TOLERANCE)
    else:
        tolerance = cfg["sigma"] * component_standard_errors(model, encoded, m, shots)
    within = float(np.mean(errors <= tolerance + 1e-12))
    estimated_map = integrated_gradients(
        model, features, _attribution_config(cfg, gradient_method=method, shots=shots, ancillas=m))
    similarity = attribution_similarity(exact_map, estimated_map)
    if shots is None:
        same_map = similarity.error == "zero_vector" or similarity.cosine >= 1.0 - 1e-9
        passed = bool(errors.max() <= EXACT_TOLERANCE and same_map)
    else:
        passed = within >= cfg["pass_fraction"]
    return {
        "ancillas": m,
        "shots": shots if shots is not None else "exact",
        "max_component_error": float(errors.max()),
        "mean_component_error": float(errors.mean()),
        "within_tolerance_fraction": within,
        "ig_similarity": similarity.to_dict(),
        "passed": passed,
    }


def cmd_gradcheck(cfg: RunConfig) -> Dict[str, Any]:
    model, samples = _load_inputs(cfg)
    if not model.encoding.is_amplitude:
        raise ConfigError("gradcheck needs an amplitude-embedded model", field="model")
    if any(m > 4 for m in cfg["ancillas"]):
        raise ConfigError("at most 4 ancillas are supported", field="ancillas")
    sample = _select(samples, [cfg["sample"]], key="sample")[0]
    features = model_features(model, sample.pixels)
    encoded = encode_for_model(model, features)
    exact = exact_input_gradient(model, encoded).values
    exact_map = integrated_gradients(model, features, _attribution_config(cfg))
    rows = []
    for m in cfg["ancillas"]:
        for shots in [None] + list(cfg["shots"]):
            say(f"🔬 m={m} shots={shots or 'exact'}")
            rows.append(_gradcheck_row(cfg, model, encoded, features, exact, exact_map, m, shots))
    report = {
        "sample_id": sample.id,
        "exact_gradient": [float(g) for g in exact],
        "sigma": cfg["sigma"],
        "rows": rows,
        "all_passed": all(row["passed"] for row in rows),
    }
    write_json(cfg.output_path("gradcheck.json"), report)
    say(("✅" if report["all_passed"] else "⚠️") + f" gradcheck: "
        f"{sum(r['passed'] for r in rows)}/{len(rows)} configurations within tolerance")
    return {"all_passed": report["all_passed"]}


def cmd_null_model(cfg: RunConfig) -> Dict[str, Any]:
    model, samples = _load_inputs(cfg)
    chosen = _select(samples, cfg["samples"])
    config = _attribution_config(cfg)

    def attribute_all(tag: str, subject: QuantumModel) -> Dict[str, Any]:
        masses = []
        for sample in chosen:
            amap = _attribute_sample(cfg, subject, sample, config)
            _render(cfg, f"{tag}_{sample.id}", amap, sample)
            masses.append(attribution_mass_concentration(amap, cfg["top_fraction"]))
        return {"top_mass": masses, "mean_top_mass": float(np.mean(masses))}

    say("🧭 Attributing with the trained model")
    report: Dict[str, Any] = {"top_fraction": cfg["top_fraction"],
                              "trained": attribute_all("trained", model), "nulls": {}}
    for index, kind in enumerate(cfg["distributions"]):
        seed = int(derive_seed(cfg.seed, index).generate_state(1)[0])
        null = sample_null_model(model.ansatz, NullDistribution(NullKind(kind), seed), model)
        null.save(cfg.output_path(f"null_{kind}_model.json"))
        say(f"🎲 Attributing with a {kind} null model")
        result = attribute_all(f"null_{kind}", null)
        result["trained_more_concentrated"] = (
            report["trained"]["mean_top_mass"] > result["mean_top_mass"])
        report["nulls"][kind] = result
    write_json(cfg.output_path("null_model_report.json"), report)
    return {"trained_more_concentrated": {k: v["trained_more_concentrated"]
                                          for k, v in report["nulls"].items()}}


COMMANDS: Dict[str, Callable[[RunConfig], Dict[str, Any]]] = {
    "generate-data": cmd_generate_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "attribute": cmd_attribute,
    "gradcheck": cmd_gradcheck,
    "null-model": cmd_null_model,
}


# Argument parsing -------------------------------------------------------------

class QAttrArgumentParser(argparse.ArgumentParser):
    """Usage errors also leave a JSON error record on stderr."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        fail(message)
        print(json.dumps(ConfigError(message).to_dict(), sort_keys=True), file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def _shots(text: str) -> Optional[int]:
    if text.lower() == "exact":
        return None
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"shots must be an integer or 'exact', got {text!r}")


def _option(parser: argparse.ArgumentParser, flag: str, **kwargs: Any) -> None:
    """Flag whose value overrides the config key of the same name, only when given."""
    parser.add_argument(flag, dest=flag.lstrip("-").replace("-", "_"),
                        default=argparse.SUPPRESS, **kwargs)


def _dataset_options(parser: argparse.ArgumentParser) -> None:
    _option(parser, "--dataset", choices=[d.value for d in DatasetName])
    _option(parser, "--image-side", type=int)
    _option(parser, "--class-pair", nargs=2, metavar=("FIRST", "SECOND"))
    _option(parser, "--train-fraction", type=float)
    _option(parser, "--subsample", type=int, help="per-class sample cap")
    _option(parser, "--download", action="store_const", const=True,
            help="fetch IDX files into the data directory first")


def _input_options(parser: argparse.ArgumentParser) -> None:
    _option(parser, "--model", help="model JSON written by train")
    _option(parser, "--data", help="sample JSON written by generate-data")


def _attribution_options(parser: argparse.ArgumentParser) -> None:
    _option(parser, "--path-steps", type=int, help="integration steps (midpoint rule)")
    _option(parser, "--space", choices=[s.value for s in AttributionSpace])
    _option(parser, "--scale", type=int, help="heatmap pixels per feature")
    _option(parser, "--workers", type=int, help="threads for gradient components")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file overriding config.json defaults")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--quiet", "-q", action="store_true", help="no status output")
    common.add_argument("--verbose", "-v", action="store_true", help="tracebacks on errors")
    common.add_argument("--record-timing", action="store_true",
                        help="record wall time in manifests (breaks byte-identical reruns)")

    parser = QAttrArgumentParser(
        prog="qattr",
        description="Integrated-gradients attributions for quantum classifiers",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Bars & Stripes data, a trained model and its attributions
  qattr generate-data --out runs/bas
  qattr train --out runs/bas
  qattr attribute --model runs/bas/model.json --data runs/bas/test.json --samples 0 1

  # Hadamard-test estimator against exact gradients at 10/100/500 shots
  qattr gradcheck --model runs/bas/model.json --data runs/bas/test.json --shots 10 100 500

  # NIST 3 vs 4 from downloaded MNIST files
  qattr generate-data --dataset nist8x8 --class-pair 3 4 --download --subsample 200
        """,
    )
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate-data", parents=[common],
                                   help="write train/test sample files")
    _dataset_options(generate)

    trainer = commands.add_parser("train", parents=[common], help="train a classifier")
    _dataset_options(trainer)
    _option(trainer, "--train-data", help="sample JSON instead of generating the task")
    _option(trainer, "--test-data")
    _option(trainer, "--n-qubits", type=int)
    _option(trainer, "--n-layers", type=int)
    _option(trainer, "--encoding", choices=[k.value for k in EncodingKind])
    _option(trainer, "--fit-policy", choices=[p.value for p in FitPolicy])
    _option(trainer, "--observable", help='Pauli string such as "Z0" or "X1 Z3"')
    _option(trainer, "--activation", choices=[a.value for a in Activation])
    _option(trainer, "--optimizer", choices=["spsa", "gd_param_shift"])
    _option(trainer, "--max-iters", type=int)
    _option(trainer, "--learning-rate", type=float)
    _option(trainer, "--init", choices=[k.value for k in NullKind])
    _option(trainer, "--resume", help="model JSON to continue from")
    _option(trainer, "--log-every", type=int)

    evaluate = commands.add_parser("evaluate", parents=[common], help="accuracy on a sample file")
    _input_options(evaluate)

    attribute = commands.add_parser("attribute", parents=[common],
                                    help="attribution JSON and heatmaps")
    _input_options(attribute)
    _attribution_options(attribute)
    _option(attribute, "--samples", type=int, nargs="+", help="indices into the sample file")
    _option(attribute, "--gradient-method", choices=[m.value for m in GradientMethod])
    _option(attribute, "--shots", type=_shots, help="shots per circuit or 'exact'")
    _option(attribute, "--ancillas", type=int)

    gradcheck = commands.add_parser("gradcheck", parents=[common],
                                    help="estimated vs exact gradients")
    _input_options(gradcheck)
    _attribution_options(gradcheck)
    _option(gradcheck, "--sample", type=int)
    _option(gradcheck, "--shots", type=int, nargs="+")
    _option(gradcheck, "--ancillas", type=int, nargs="+")
    _option(gradcheck, "--sigma", type=float, help="tolerance band in standard errors")
    _option(gradcheck, "--pass-fraction", type=float)

    null_model = commands.add_parser("null-model", parents=[common],
                                     help="trained vs random-parameter attributions")
    _input_options(null_model)
    _attribution_options(null_model)
    _option(null_model, "--samples", type=int, nargs="+")
    _option(null_model, "--distributions", nargs="+", choices=[k.value for k in NullKind])
    _option(null_model, "--top-fraction", type=float)
    return parser


GLOBAL_FLAGS = ("command", "config", "seed", "out", "quiet", "verbose", "record_timing")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    set_quiet(args.quiet)
    overrides = {k: v for k, v in vars(args).items() if k not in GLOBAL_FLAGS}
    try:
        cfg = resolve(args.command, args.config, overrides, args.out, args.seed,
                      args.record_timing)
        started = time.perf_counter()
        extra = COMMANDS[args.command](cfg)
        cfg.write_manifest(extra, time.perf_counter() - started)
        say(f"✅ {args.command} finished, outputs in {cfg.output_dir}")
        return EXIT_OK
    except QAttrError as e:
        fail(e.message)
        print(json.dumps(e.to_dict(), sort_keys=True), file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return e.exit_code
    except Exception as e:
        fail(f"Unexpected error: {e}")
        print(json.dumps({"error": type(e).__name__, "message": str(e),
                          "exit_code": EXIT_FAILURE, "details": {}}, sort_keys=True),
              file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
