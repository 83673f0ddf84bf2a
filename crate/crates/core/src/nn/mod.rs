//! Dense networks with hand-written reverse mode, finite-difference checks and Adam.

mod adam;
mod dense;
mod fd;

pub use adam::Adam;
pub use dense::{DenseNetwork, ForwardCache, GradientBundle, Layer, LEAKY_SLOPE};
pub use fd::fd_jacobian;
