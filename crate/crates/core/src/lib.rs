//! Tabular language-model pipeline: supervised binning of numerical
//! features into shared magnitude tokens, intra-feature attention fusion,
//! an order-agnostic transformer encoder, multi-table pre-training and
//! fine-tuning.

pub mod ablation;
pub mod backbone;
pub mod checkpoint;
pub mod discretize;
pub mod encoder;
pub mod experiment;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod preprocess;
pub mod schedule;
pub mod synthetic;
pub mod table;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use ablation::{ablation_forward, AblationConfig, NumericEncoding};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use discretize::{fit_bins, BinBoundaries, BinConfig};
pub use metrics::{alpha_stat, auc, delta_buckets, magnitude_geometry_report, rmse, DeltaBucket, MetricReport};
pub use model::{ModelConfig, TabModel};
pub use preprocess::TablePreprocessor;
pub use schedule::lr_at;
pub use synthetic::{gen_synthetic, LabelRule, SyntheticTaskSpec};
pub use table::{load_csv, split, Dataset, FeatureSchema, SplitSpec, Task};
pub use train::{finetune, pretrain, FinetuneConfig, Init, PretrainConfig, TaskMode};
pub use vocab::Vocabulary;
