pub mod ast;
pub mod cli;
pub mod diag;
pub mod equiv;
pub mod index;
pub mod kinding;
pub mod normalize;
pub mod project;
pub mod protocols;
pub mod simulate;
pub mod surface;
pub mod typecheck;
