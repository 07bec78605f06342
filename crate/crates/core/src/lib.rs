pub mod geometry;
pub mod scene;
pub mod tracker;
pub mod guidance;
pub mod bracelet;
pub mod harness;
pub mod session;
