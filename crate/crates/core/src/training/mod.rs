//! Losses, backpropagation through the dual-rate model, the synthetic
//! corpus and the trainer.

pub mod backprop;
pub mod corpus;
pub mod loss;
pub mod optim;
pub mod trainer;

pub use backprop::{
    backward, backward_terms, backward_trace, batch_loss, forward_trace, Trace, TrainingPair,
};
pub use corpus::{
    load_corpus, make_corpus, make_synthetic_pair, save_corpus, CorpusItem, EVAL_SNRS_DB,
    TRAIN_SNRS_DB,
};
pub use loss::{
    sisnr, spec_mse_loss, stft, total_loss, LossTerms, LossWeights, Spectrogram, StftParams,
    StftWindow,
};
pub use optim::{Adam, AdamParams, Plateau};
pub use trainer::{
    input_sisnr, mean_sisnr, train, train_from, train_on, train_synthetic, EpochRecord, Stage,
    TrainConfig, TrainOutcome,
};
