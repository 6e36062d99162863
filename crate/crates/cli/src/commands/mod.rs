pub mod eval;
pub mod robot;
pub mod segment;
pub mod som_ui;
pub mod tom;
pub mod validate;
