#!/usr/bin/env python3
"""
Attribution Analyzer

Integrated-gradients attributions for quantum classifiers:

    IG_i = (x_i - x'_i) * mean_t dF/dx_i (x' + alpha_t (x - x'))

with the midpoint rule alpha_t = (t - 1/2) / S. Gradients come from a
GradientBackend; with a tanh activation they are multiplied by
1 - tanh(F)^2. Attributions live in pixel space (chain rule through the
encoder) or in amplitude space (directly on the encoded amplitudes).
"""

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Protocol, Sequence, Tuple, Union, runtime_checkable

import numpy as np

from errors import AttributionError, DataFormatError, DataIOError
from feature_encoding import EncodedInput, EncodingKind, encode
from gradient_engine import GradientBackend, GradientMethod, pixel_space_gradient
from quantum_model import QuantumModel, evaluate, expectation
from statevector_simulator import StateVector, derive_seed

DEFAULT_PATH_STEPS = 64
TOP_K_FRACTION = 0.1
TOP_K_MINIMUM = 4


class AttributionSpace(str, Enum):
    PIXEL = "pixel"
    AMPLITUDE = "amplitude"


@dataclass
class AttributionConfig:
    """How to attribute: baseline, path resolution, gradient backend and seed.

    baseline=None picks the mode's default: a blank image, or for the
    normalised embedding (where blank is degenerate) a constant image. That
    image spreads weight evenly over the D encoded amplitudes, which is the
    uniform state only when D = 2^n.
    """
    baseline: Optional[np.ndarray] = None
    path_steps: int = DEFAULT_PATH_STEPS
    gradient_method: GradientMethod = GradientMethod.EXACT
    shots: Optional[int] = None
    ancillas: int = 1
    seed: int = 0
    space: AttributionSpace = AttributionSpace.PIXEL
    workers: int = 1

    def __post_init__(self):
        if self.path_steps < 1:
            raise AttributionError(f"path_steps must be >= 1, got {self.path_steps}")
        if self.shots is not None and self.shots < 1:
            raise AttributionError(f"shots must be >= 1 or None (exact), got {self.shots}")
        if self.baseline is not None:
            self.baseline = np.asarray(self.baseline, dtype=float).reshape(-1)

    def backend(self) -> GradientBackend:
        return GradientBackend(self.gradient_method, self.shots, self.ancillas, self.workers)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "baseline": [float(v) for v in self.baseline] if self.baseline is not None else None,
            "path_steps": self.path_steps,
            "gradient_method": self.gradient_method.value,
            "shots": self.shots if self.shots is not None else "exact",
            "ancillas": self.ancillas,
            "seed": self.seed,
            "space": self.space.value,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AttributionConfig":
        shots = data.get("shots", "exact")
        baseline = data.get("baseline")
        return cls(
            baseline=np.asarray(baseline, dtype=float) if baseline is not None else None,
            path_steps=int(data.get("path_steps", DEFAULT_PATH_STEPS)),
            gradient_method=GradientMethod(data.get("gradient_method", GradientMethod.EXACT.value)),
            shots=None if shots in (None, "exact") else int(shots),
            ancillas=int(data.get("ancillas", 1)),
            seed=int(data.get("seed", 0)),
            space=AttributionSpace(data.get("space", AttributionSpace.PIXEL.value)),
        )


@dataclass
class AttributionMap:
    scores: np.ndarray
    config: AttributionConfig
    completeness_residual: float
    model_output_at_x: float
    model_output_at_baseline: float
    features: Optional[np.ndarray] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def output_difference(self) -> float:
        return self.model_output_at_x - self.model_output_at_baseline

    @property
    def relative_residual(self) -> float:
        """Residual as a fraction of |out(x) - out(x')| (inf if that difference is 0)."""
        difference = abs(self.output_difference)
        if difference == 0.0:
            return 0.0 if self.completeness_residual == 0.0 else float("inf")
        return self.completeness_residual / difference

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scores": [float(s) for s in self.scores],
            "residual": float(self.completeness_residual),
            "model_output_at_x": float(self.model_output_at_x),
            "model_output_at_baseline": float(self.model_output_at_baseline),
            "features": [float(v) for v in self.features] if self.features is not None else None,
            "config": self.config.to_dict(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AttributionMap":
        try:
            features = data.get("features")
            return cls(
                scores=np.asarray(data["scores"], dtype=float),
                config=AttributionConfig.from_dict(data.get("config", {})),
                completeness_residual=float(data["residual"]),
                model_output_at_x=float(data["model_output_at_x"]),
                model_output_at_baseline=float(data["model_output_at_baseline"]),
                features=np.asarray(features, dtype=float) if features is not None else None,
                metadata=dict(data.get("metadata", {})),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataFormatError(f"invalid attribution document: {e}")

    def save(self, path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        except OSError as e:
            raise DataIOError(f"cannot write attribution file {path}: {e}", path=str(path))
        return path

    @classmethod
    def load(cls, path) -> "AttributionMap":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise DataIOError(f"attribution file not found: {path}", path=str(path))
        except json.JSONDecodeError as e:
            raise DataFormatError(f"attribution file {path} is not valid JSON: {e}", path=str(path))
        return cls.from_dict(data)


@runtime_checkable
class DifferentiableModel(Protocol):
    """Anything integrated_gradients can walk a path through."""

    def output(self, point: np.ndarray) -> float:
        ...

    def gradient(self, point: np.ndarray, seed: int, alpha: float) -> np.ndarray:
        ...


class PixelSpaceTarget:
    """Activated model output as a function of raw pixels."""

    def __init__(self, model: QuantumModel, backend: GradientBackend):
        self.model = model
        self.backend = backend

    def raw(self, point: np.ndarray) -> float:
        return evaluate(self.model, encode(point, self.model.encoding)).raw

    def output(self, point: np.ndarray) -> float:
        return float(self.model.activate(self.raw(point)))

    def gradient(self, point: np.ndarray, seed: int, alpha: float) -> np.ndarray:
        grad = pixel_space_gradient(self.model, point, self.backend, seed=seed, alpha=alpha)
        return grad * self.model.activation_slope(self.raw(point))


class AmplitudeSpaceTarget:
    """Activated bilinear form tanh(z^dagger U^dagger O U z) over unnormalised amplitudes.

    On normalised amplitudes this equals the model output, so the
    completeness check still compares against out(x) - out(x').
    """

    def __init__(self, model: QuantumModel, backend: GradientBackend):
        if model.encoding.kind == EncodingKind.ANGLE:
            raise AttributionError("amplitude-space attribution needs an amplitude embedding")
        self.model = model
        self.backend = backend

    def raw(self, point: np.ndarray) -> float:
        norm_squared = float(np.sum(np.abs(point) ** 2))
        if norm_squared == 0.0:
            return 0.0
        return norm_squared * expectation(self.model, StateVector(point / np.sqrt(norm_squared)))

    def output(self, point: np.ndarray) -> float:
        return float(self.model.activate(self.raw(point)))

    def gradient(self, point: np.ndarray, seed: int, alpha: float) -> np.ndarray:
        encoded = EncodedInput(raw_features=point, mode=self.model.encoding,
                               amplitudes=point, used_features=len(point))
        grad = self.backend.input_gradient(self.model, encoded, seed).values
        return grad * self.model.activation_slope(self.raw(point))


def default_baseline(model: QuantumModel, feature_count: int) -> np.ndarray:
    """Blank image, or for the normalised embedding the all-ones image.

    The all-ones image encodes to 1/sqrt(D) on the first D amplitudes and
    zero elsewhere; the baseline stays in pixel space, so padded amplitudes
    cannot be reached from it.
    """
    if model.encoding.kind == EncodingKind.AMPLITUDE_NORMALIZED:
        return np.ones(feature_count)
    return np.zeros(feature_count)


def midpoint_alphas(path_steps: int) -> np.ndarray:
    return (np.arange(1, path_steps + 1) - 0.5) / path_steps


def step_seed(seed: int, step: int) -> int:
    """Seed for path step `step`; components derive their own seeds from it."""
    return int(derive_seed(seed, step).generate_state(1)[0])


def _path_integral(target: DifferentiableModel, point: np.ndarray, baseline: np.ndarray,
                   config: AttributionConfig) -> np.ndarray:
    total = np.zeros(len(point))
    delta = point - baseline
    for step, alpha in enumerate(midpoint_alphas(config.path_steps)):
        grad = np.asarray(target.gradient(baseline + alpha * delta,
                                          step_seed(config.seed, step), float(alpha)))
        total += np.real(grad)
    return delta * total / config.path_steps


def integrated_gradients(model: Union[QuantumModel, DifferentiableModel],
                         raw_features: Sequence[float],
                         config: Optional[AttributionConfig] = None) -> AttributionMap:
    """Integrated-gradients attribution of `raw_features` against the configured baseline."""
    config = config or AttributionConfig()
    pixels = np.asarray(raw_features, dtype=float).reshape(-1)
    if config.baseline is not None and len(config.baseline) != len(pixels):
        raise AttributionError(
            f"baseline has {len(config.baseline)} features, input has {len(pixels)}")

    if not isinstance(model, QuantumModel):
        if not isinstance(model, DifferentiableModel):
            raise AttributionError(f"cannot attribute a {type(model).__name__}")
        baseline_pixels = config.baseline if config.baseline is not None else np.zeros(len(pixels))
        target, point, baseline = model, pixels, baseline_pixels
    else:
        if model.encoding.is_amplitude:
            for name, values in (("input", pixels), ("baseline", config.baseline)):
                if values is not None and (values.min(initial=0.0) < 0.0 or values.max(initial=0.0) > 1.0):
                    raise AttributionError(f"{name} features must lie in [0, 1]")
        baseline_pixels = (config.baseline if config.baseline is not None
                           else default_baseline(model, len(pixels)))
        if config.space == AttributionSpace.PIXEL:
            target = PixelSpaceTarget(model, config.backend())
            point, baseline = pixels, baseline_pixels
        else:
            target = AmplitudeSpaceTarget(model, config.backend())
            point = np.asarray(encode(pixels, model.encoding).amplitudes, dtype=float)
            baseline = np.asarray(encode(baseline_pixels, model.encoding).amplitudes, dtype=float)

    scores = _path_integral(target, point, baseline, config)
    if not np.all(np.isfinite(scores)):
        raise AttributionError("attribution scores are not finite")
    out_x = target.output(point)
    out_baseline = target.output(baseline)
    residual = abs(float(np.sum(scores)) - (out_x - out_baseline))
    return AttributionMap(scores=scores, config=replace(config, baseline=baseline_pixels),
                          completeness_residual=residual, model_output_at_x=out_x,
                          model_output_at_baseline=out_baseline, features=pixels)


# Post-processing -----------------------------------------------------------

def _scores(item: Union[AttributionMap, Sequence[float]]) -> np.ndarray:
    values = item.scores if isinstance(item, AttributionMap) else item
    return np.asarray(values, dtype=float).reshape(-1)


def normalize_for_render(item: Union[AttributionMap, Sequence[float]]) -> Tuple[np.ndarray, bool]:
    """Scores divided by max |score| (sign kept). Returns (values, all_zero)."""
    scores = _scores(item)
    peak = float(np.max(np.abs(scores))) if len(scores) else 0.0
    if peak == 0.0:
        return scores.copy(), True
    return scores / peak, False


def top_k_size(feature_count: int, fraction: float = TOP_K_FRACTION,
               minimum: int = TOP_K_MINIMUM) -> int:
    return min(feature_count, max(minimum, int(fraction * feature_count)))


def top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    # Stable sort keeps ties in index order.
    return np.argsort(-np.abs(scores), kind="stable")[:k]


@dataclass
class SimilarityReport:
    cosine: float
    rank_overlap_topk: float
    k: int
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cosine": None if np.isnan(self.cosine) else float(self.cosine),
            "rank_overlap_topk": float(self.rank_overlap_topk),
            "k": self.k,
            "error": self.error,
        }


def attribution_similarity(a: Union[AttributionMap, Sequence[float]],
                           b: Union[AttributionMap, Sequence[float]]) -> SimilarityReport:
    """Cosine similarity and top-k |score| overlap (k = 10% of features, at least 4)."""
    first, second = _scores(a), _scores(b)
    if len(first) != len(second):
        raise AttributionError(f"cannot compare maps of length {len(first)} and {len(second)}")
    k = top_k_size(len(first))
    overlap = len(set(top_k_indices(first, k)) & set(top_k_indices(second, k))) / k if k else 0.0
    norms = float(np.linalg.norm(first)) * float(np.linalg.norm(second))
    if norms == 0.0:
        return SimilarityReport(float("nan"), overlap, k, error="zero_vector")
    cosine = float(np.clip(first @ second / norms, -1.0, 1.0))
    return SimilarityReport(cosine, overlap, k)


def attribution_mass_concentration(item: Union[AttributionMap, Sequence[float]],
                                   top_fraction: float = TOP_K_FRACTION) -> float:
    """Share of total |score| carried by the top `top_fraction` of features."""
    scores = np.abs(_scores(item))
    total = float(np.sum(scores))
    if total == 0.0:
        return 0.0
    k = top_k_size(len(scores), top_fraction, minimum=1)
    return float(np.sum(np.sort(scores)[::-1][:k]) / total)
