//! Layer primitives: forward and backward passes for everything the network
//! template uses.
//!
//! All forward functions are pure; backward functions take the cache produced
//! by the matching forward call and return exact analytic gradients.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod loss;
pub mod norm;
pub mod pool;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar};
pub use conv::{conv2d, conv2d_backward, ConvParams, Padding};
pub use dense::{dense, dense_backward, DenseParams};
pub use loss::{cross_entropy, softmax, softmax_backward, softmax_xent_grad};
pub use norm::{
    batchnorm, batchnorm_backward, batchnorm_infer, batchnorm_train, BatchNormCache,
    BatchNormParams,
};
pub use pool::{
    global_avg_pool, global_avg_pool_backward, maxpool2d, maxpool2d_backward, unpool_replicate,
    unpool_replicate_backward, unpool_switch, unpool_switch_backward, PoolRecord,
};

/// Forward execution mode. Train mode keeps caches and updates batch-norm
/// running statistics; infer mode never mutates anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Train,
    Infer,
}
