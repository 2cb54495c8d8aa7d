//! Dense arrays, a reverse-mode computation graph over the fixed op set the
//! network needs, a finite-difference verifier and the checkpoint format.

pub mod checkpoint;
mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_report, GradCheckOptions, GradCheckReport};
pub use graph::{softmax_in_place, Graph, Mode, Var, BN_EPS, PROB_FLOOR};
pub use kernels::matmul as dense_matmul;
pub use tensor::Tensor;
