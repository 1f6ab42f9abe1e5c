// mdbook renders the guide but cannot run its code blocks as tests, so the
// chapters are included here as doc comments and `cargo test --doc` checks
// every fence. One module per chapter keeps a failing snippet traceable to
// its file.
//
// Fences marked `no_run` compile but are skipped at runtime (the full
// experiment takes minutes); `text` fences are prose and ignored.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/synthetic-passbys.md")]
pub mod synthetic_passbys {}

#[doc = include_str!("../../../book/src/attenuation-profile.md")]
pub mod attenuation_profile {}

#[doc = include_str!("../../../book/src/features.md")]
pub mod features {}

#[doc = include_str!("../../../book/src/network.md")]
pub mod network {}

#[doc = include_str!("../../../book/src/speed-svr.md")]
pub mod speed_svr {}

#[doc = include_str!("../../../book/src/cross-validation.md")]
pub mod cross_validation {}

#[doc = include_str!("../../../book/src/detection.md")]
pub mod detection {}

#[doc = include_str!("../../../book/src/label-correction.md")]
pub mod label_correction {}

#[doc = include_str!("../../../book/src/command-line.md")]
pub mod command_line {}
