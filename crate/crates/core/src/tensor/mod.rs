//! Dense arrays, a reverse-mode tape, parameters and optimizers.

mod array;
mod checkpoint;
mod graph;
mod optim;
mod param;

pub use array::Array;
pub use checkpoint::Checkpoint;
pub use graph::{Gradients, Graph, Var};
pub use optim::{Adam, Optimizer, Sgd};
pub use param::{ParamId, ParamStore, Parameter};
