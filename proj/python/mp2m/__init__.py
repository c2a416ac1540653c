"""Memory-guided diffusion trajectory forecasting."""

from ._core import (
    ArgumentError,
    DataError,
    FormatError,
    StateError,
    Sample,
    MemoryBank,
    Checkpoint,
    Schedule,
    synth_generate,
    load_dataset,
    save_dataset,
    build_bank,
    load_bank,
    save_bank,
    address,
    make_schedule,
    q_sample,
    ade,
    fde,
    best_of_k,
    train,
    oracle_checkpoint,
    load_checkpoint,
    save_checkpoint,
    predict,
    evaluate,
    plot_svg,
    run_cli,
)

__all__ = [name for name in dir() if not name.startswith("_")]
