pub mod adapter;
pub mod artifact;
pub mod llm;
pub mod bench;
pub mod builtins;
pub mod discriminator;
pub mod generator;
pub mod net;
pub mod orchestrator;
pub mod plan;
pub mod raster;
pub mod registry;
