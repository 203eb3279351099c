//! Small numerical toolbox shared by the model and bound layers.

pub mod golden;
pub mod normal;
pub mod quadrature;
