pub mod closed;
pub mod variational;

pub use closed::{BoundKind, BoundedValue, DivergenceSpec};
pub use variational::{ClassDescriptor, ClassKind, DualSolution, FunctionClass};
