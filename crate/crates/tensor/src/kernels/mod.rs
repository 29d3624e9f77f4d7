pub mod conv;
pub(crate) mod sample;
