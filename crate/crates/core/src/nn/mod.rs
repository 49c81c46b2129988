//! Dense-tensor and reverse-mode differentiation core.

pub mod block;
pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use block::{attention_block, sinusoidal_positions, AttentionBlockOut, AttentionBlockParams};
pub use gradcheck::{finite_difference_check, GradCheckConfig, GradCheckReport};
pub use params::{normal_init, xavier_uniform, ParamId, ParamNode, ParamStore};
pub use tape::{NodeId, Tape, MASK_NEG};
pub use tensor::{softmax_row, Tensor};
