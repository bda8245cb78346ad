//! Dense `f64` tensors with reverse-mode automatic differentiation.

mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{
    check_against, finite_diff_check, relative_error, CoordinateError, GradCheckReport,
    RELATIVE_ERROR_FLOOR,
};
pub use param::{ParamGrads, Parameter, Parameterized};
pub(crate) use param::check_unique_names;
pub use tape::{BinaryOp, Gradients, OpKind, Tape, TapeNode, UnaryOp, Var};
pub use tensor::Tensor;
