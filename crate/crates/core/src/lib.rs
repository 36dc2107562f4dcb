pub mod analysis;
pub mod certify;
pub mod chain;
pub mod cli;
pub mod expr;
pub mod kernel;
pub mod oracle;
pub mod orbit;
