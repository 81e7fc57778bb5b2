pub mod activation;
pub mod dropout;
pub mod linear;
pub mod loss;
pub mod lstm;
pub mod mlp;
pub mod tagger;

pub use activation::Activation;
pub use linear::{LinearLayer, ForwardCache, LayerGradients, WeightGrad};
pub use lstm::LstmCell;
pub use mlp::{Mlp, Selection};
pub use tagger::BiLstmTagger;
