pub mod codegen;
pub mod config;
pub mod corpus;
pub mod enhancer;
pub mod gateway;
pub mod orchestrator;
pub mod planning;
pub mod retrieval;
pub mod service;
