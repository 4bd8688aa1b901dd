pub mod categorical;
pub mod concentration;
pub mod datagen;
pub mod erm;
pub mod error;
pub mod experiment;
pub mod functional;
pub mod linalg;
pub mod moments;
pub mod predictors;
