pub mod diag;
pub mod model;
pub mod engine;
pub mod explorer;
pub mod oracle;
pub mod dag;
pub mod analysis;
pub mod sched;
pub mod codegen;
pub mod vm;
pub mod pipeline;
pub mod random;
