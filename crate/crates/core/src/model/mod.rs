//! Now and future prediction networks and their baselines.

pub mod attention;
pub mod baselines;
pub mod config;
pub mod convlstm;
pub mod future;
pub mod layers;
pub mod now;
pub mod params;

pub use baselines::{persistence_predict, ArModel};
pub use config::{AttentionVariant, ModelConfig};
pub use convlstm::{ConvLstm, ConvLstmState};
pub use future::{FutureModel, FuturePrediction};
pub use now::{NowModel, NowPrediction};
pub use params::{Forward, Init, ParamStore};
