mod convert_grey;
mod evaluate;
mod extract;
mod prepare_toy;
mod rank;
mod train;

pub use convert_grey::{run_convert_grey, ConvertGreyArgs};
pub use evaluate::{run_evaluate, EvaluateArgs};
pub use extract::{run_extract, ExtractArgs};
pub use prepare_toy::{run_prepare_toy, PrepareToyArgs};
pub use rank::{run_rank, RankArgs};
pub use train::{run_train, TrainArgs};
