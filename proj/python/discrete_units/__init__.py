"""Two-stage discrete speech unit pipeline: layer weighting, k-means units,
dedup/BPE token streams and CTC probes."""

from ._dsu import (
    ArgumentError,
    BpeModel,
    Codebook,
    DsuError,
    FormatError,
    InfeasibleError,
    assign,
    bitrate,
    bpe_decode,
    bpe_encode,
    bpe_train,
    corpus_cer,
    ctc_grad,
    ctc_loss,
    dedup,
    distortion,
    export_weight_csv,
    gap_report,
    greedy_decode,
    kmeans_train,
    layer_norm,
    levenshtein,
    load_archive,
    run_pipeline,
    save_archive,
    softmax_weights,
    synth_generate,
    weighted_sum,
)

__all__ = [name for name in dir() if not name.startswith("_")]
