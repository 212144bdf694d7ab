//! Embedded convolutional LSTM (ECLSTM) for sliding-window time-series
//! regression: tensor autodiff core, the ECLSTM/FCLSTM recurrent layers, a
//! three-stage model pipeline (reduction, stacked ECLSTM backbone, dense
//! head), run-to-failure data handling, Adam training with RUL metrics, and
//! BOHB architecture search over the conditional configuration space.

pub mod cell;
pub mod check;
pub mod params;
pub mod tensor;

pub use params::{BoundParams, ParamId, ParamStore};
