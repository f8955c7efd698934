pub mod deepdmd;
pub mod dmdc;
pub mod error;
pub mod numerics;
pub mod observables;
pub mod ssprog;
pub mod systems;

pub use error::{Error, Result};

// The guide's listings run as doctests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/simulating.md")]
    mod simulating {}
    #[doc = include_str!("../../../book/src/observables.md")]
    mod observables {}
    #[doc = include_str!("../../../book/src/dmdc.md")]
    mod dmdc {}
    #[doc = include_str!("../../../book/src/deepdmd.md")]
    mod deepdmd {}
    #[doc = include_str!("../../../book/src/programming.md")]
    mod programming {}
}
