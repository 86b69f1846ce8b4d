//! Code listings of the guide under `book/src`, compiled and run as
//! doctests so the book cannot drift from the library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/world.md")]
pub mod world {}

#[doc = include_str!("../../../book/src/planner.md")]
pub mod planner {}

#[doc = include_str!("../../../book/src/language.md")]
pub mod language {}

#[doc = include_str!("../../../book/src/follower.md")]
pub mod follower {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/learning.md")]
pub mod learning {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}

#[doc = include_str!("../../../book/src/service.md")]
pub mod service {}
