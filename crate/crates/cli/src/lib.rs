pub mod config;
pub mod formats;
pub mod manifest;
pub mod reported;
pub mod stages;
pub mod tensor;
