pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Result, RtfnError};
pub use model::{ModelConfig, RtfnModel, Task};
pub use params::{ParamId, ParamStore, Session};
pub use tensor::{Graph, Padding, Tensor, Var};
pub use train::TrainConfig;
