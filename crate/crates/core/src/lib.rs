pub mod attacks;
pub mod config;
pub mod electrical;
pub mod engine;
pub mod irs;
pub mod link;
pub mod time;
pub mod params;
