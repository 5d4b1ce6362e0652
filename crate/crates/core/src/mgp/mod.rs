//! Multi-output Gaussian process with a nonseparable cross-covariance and an
//! L1-penalized regression trend.

pub mod basis;
pub mod dataset;
pub mod fit;
pub mod io;
pub mod lasso;
pub mod likelihood;
pub mod model;
pub mod synthetic;

pub use basis::{build_f_matrix, BasisKind, RegressionBasis};
pub use dataset::Dataset;
pub use fit::{fit, fit_independent, FitConfig, LambdaChoice, LambdaRule};
pub use io::{load_model, model_from_json, model_to_json, save_model, MODEL_FORMAT};
pub use lasso::{gls_beta_l1, lambda_max};
pub use likelihood::{penalized_loglik, MgpParams};
pub use model::{rmse, FitDiagnostics, FittedModel, LambdaScore, Prediction, Standardizer, Surrogate};
pub use synthetic::draw_dataset;
