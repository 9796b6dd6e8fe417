//! Minimal tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation executed on it. Values live in the
//! graph's nodes; [`Var`] is a cheap handle to a node. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse creation
//! order, which is a topological order by construction.
//!
//! Trainable weights are kept outside the graph in a [`ParamStore`]. A graph
//! copies a parameter in the first time it is used and maps later uses to
//! the same node, so reusing a parameter shares it structurally.
//!
//! The engine is generic over the element type: models train in `f32`,
//! while gradient checks can run the same backward rules in `f64`.

mod gradcheck;
mod graph;
mod ops;
mod params;
mod tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;

pub use gradcheck::{finite_diff_check, finite_diff_check_params, GradCheck};
pub use graph::{Graph, Var};
pub use params::{Param, ParamGroup, ParamId, ParamStore};
pub use tensor::Tensor;

/// Element type of tensors.
pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Float for f32 {}
impl Float for f64 {}

#[inline]
pub(crate) fn cst<T: Float>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}
