//! Synthetic corpora, pretrain/fine-tune runs, ablation sweeps and result
//! persistence.

mod config;
mod corpus;
mod experiment;
mod sweep;
mod train;

pub use config::{AdapterSettings, ExperimentConfig, ModelConfig, TrainConfig, PLATEAU_TOL, PLATEAU_WINDOW};
pub use corpus::{all_pairs, generate_corpus, Corpus, CorpusSpec, TrialPair, Utterance};
pub use experiment::{execute, load_result, run_experiment, write_atomic, write_json_atomic, ExperimentOutput, RunResult};
pub use sweep::{principal_k_grid, rank_grid, run_sweep, write_sweep, SweepMode, SweepOptions, SweepRow, SweepTable};
pub use train::{
    embed_all, finetune, model_dims, pretrain, resolve_adapter, score_trials, train, FinetuneOutput, ParamSummary,
    STREAM_ADAPTER, STREAM_CLASSIFIER, STREAM_FINETUNE_SHUFFLE, STREAM_MODEL_INIT, STREAM_PRETRAIN_SHUFFLE,
};
