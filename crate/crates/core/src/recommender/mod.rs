//! Venue recommender: a text encoder feeding a softmax classifier over venues.

pub mod checkpoint;
pub mod encoder;
pub mod external;
pub mod model;
pub mod train;

pub use encoder::{Embedding, HashedBowEncoder, TextEncoder};
pub use external::load_external_recommendations;
pub use model::{
    cross_entropy, head_gradient, predict_scores, softmax, top_k, ClassifierHead, LmRec, RankedItem,
    RecommendationList, ScoreDistribution,
};
pub use train::{
    hyperparameter_search, initial_model, train, train_step, train_with_optimizer, EpochRecord, Example, Optimizer,
    ParamSlot, SearchGrid, SearchOutcome, SearchRecord, Sgd, TrainConfig, TrainOutcome, TrainingData,
    BUILTIN_LEARNING_RATES, REFERENCE_DROPOUTS, REFERENCE_LEARNING_RATES,
};
