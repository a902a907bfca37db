//! Graph variational autoencoder for small molecules.

pub mod chem;
pub mod dataio;
pub mod encoder;
pub mod fingerprint;
pub mod numkernel;
pub mod smiles;
pub mod train;
pub mod vaemodel;

pub type Tensor = numkernel::Tensor<f64>;
pub type Tensor32 = numkernel::Tensor<f32>;
pub type ParamStore = numkernel::ParamStore<f64>;
pub type ModelParams = vaemodel::ModelParams<f64>;
pub type ModelParams32 = vaemodel::ModelParams<f32>;
pub type LossBreakdown = vaemodel::LossBreakdown<f64>;
pub type TrainOutput = train::TrainOutput<f64>;
