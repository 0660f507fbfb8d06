//! The guide in `book/` compiled as doc-tests, one module per chapter, so
//! every listing runs under `cargo test`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/grids.md")]
pub mod grids {}
#[doc = include_str!("../../../book/src/power_flow.md")]
pub mod power_flow {}
#[doc = include_str!("../../../book/src/environment.md")]
pub mod environment {}
#[doc = include_str!("../../../book/src/chronics.md")]
pub mod chronics {}
#[doc = include_str!("../../../book/src/agents.md")]
pub mod agents {}
#[doc = include_str!("../../../book/src/command_line.md")]
pub mod command_line {}
#[doc = include_str!("../../../book/src/service.md")]
pub mod service {}
