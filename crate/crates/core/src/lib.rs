pub mod bridge;
pub mod composer;
pub mod decompose;
pub mod embedding;
pub mod eval;
pub mod forge;
pub mod manifest;
pub mod prompts;
pub mod sae;
pub mod store;
pub mod tuner;
