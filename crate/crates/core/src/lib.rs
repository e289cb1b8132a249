pub mod checker;
pub mod clock;
pub mod corpus;
pub mod eval;
pub mod gateway;
pub mod hash;
pub mod image;
pub mod interpreter;
pub mod orchestrator;
pub mod painter;
pub mod planner;
pub mod scene;
pub mod transport;
