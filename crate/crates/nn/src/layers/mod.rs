mod conv;
mod dense;
mod norm;
mod pool;

pub use conv::{conv1d_forward, Conv1d};
pub use dense::{dense_forward, Dense};
pub use norm::{BatchNorm, Dropout, BATCHNORM_DECAY};
pub(crate) use norm::BatchNormCache;
pub use pool::{maxpool_backward, maxpool_forward, MaxPool1d};
