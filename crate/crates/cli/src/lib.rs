//! Library surface of the finegrain command-line tool: the pipeline runner
//! and its configuration types, reused by the binary and by integration
//! tests.

pub mod pipeline;
