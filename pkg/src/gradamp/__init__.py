"""gradamp: contrastive training with hardness-amplified gradients.

Submodules load lazily so that importing the package (e.g. for the console
script) does not initialize numpy's thread pools before the CLI has applied
the EGA_THREADS cap.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    # errors
    "GradampError": "errors",
    "InvalidConfigError": "errors",
    "InputError": "errors",
    "NonFiniteGradientError": "errors",
    "FileFormatError": "errors",
    "BadMagicError": "errors",
    "TruncatedPayloadError": "errors",
    "UnknownDtypeError": "errors",
    "NumericalWarning": "errors",
    # loss and gradients
    "GradientPair": "infonce",
    "PipelineResult": "infonce",
    "similarity_matrix": "infonce",
    "softmax_probs": "infonce",
    "infonce_loss": "infonce",
    "infonce_grads": "infonce",
    "infonce_pipeline": "infonce",
    # amplification
    "HARDNESS_MODES": "amplifier",
    "hardness_matrix": "amplifier",
    "amplify_probs": "amplifier",
    "weighting_matrix": "amplifier",
    "amplified_gradients": "amplifier",
    "amplified_pipeline": "amplifier",
    # encoder
    "EncoderParams": "encoder",
    "ActivationCache": "encoder",
    "ParamGrads": "encoder",
    "init_encoder": "encoder",
    "forward": "encoder",
    "backward": "encoder",
    "normalize_backward": "encoder",
    "adam_step": "encoder",
    "zero_grads": "encoder",
    "gelu": "encoder",
    "gelu_grad": "encoder",
    "save_checkpoint": "encoder",
    "load_checkpoint": "encoder",
    # chunked training
    "ChunkPlan": "gradcache",
    "CacheMeter": "gradcache",
    "TrainStepResult": "gradcache",
    "make_plan": "gradcache",
    "embed_in_chunks": "gradcache",
    "cached_backward": "gradcache",
    "train_step": "gradcache",
    # data
    "SyntheticConfig": "data",
    "PairDataset": "data",
    "XorShift64Star": "data",
    "splitmix64": "data",
    "generate_dataset": "data",
    "sample_batch": "data",
    "write_embeddings": "data",
    "read_embeddings": "data",
    "dataset_from_embeddings": "data",
    "load_dataset": "data",
    # harness
    "RunConfig": "harness",
    "MetricsRecord": "harness",
    "RunResult": "harness",
    "GradcheckReport": "harness",
    "AblationResult": "harness",
    "retrieval_metrics": "harness",
    "run_train": "harness",
    "run_eval": "harness",
    "run_gradcheck": "harness",
    "run_ablation": "harness",
    # estimator API
    "ContrastiveEmbedder": "estimator",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name: str):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    return getattr(import_module(f".{module}", __name__), name)


def __dir__():
    return __all__
