pub mod amount;
pub mod category;
pub mod error;
pub mod fca;
pub mod fct;
pub mod nutrient;
pub mod parser;
pub mod resolver;
pub mod store;
pub mod units;
pub mod vocab;

pub use amount::Amount;
pub use error::{Error, Result};
