pub mod book;
pub mod engine;
pub mod entrypoint;
pub mod error;
pub mod identity;
pub mod pow;
pub mod sim;
pub mod suite;
pub mod trace;
pub mod wire;
