pub mod activation;
pub mod audio;
pub mod autodiff;
pub mod bench;
pub mod encoding;
pub mod gradcheck;
pub mod gradsuite;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod tensor;
pub mod trainer;
