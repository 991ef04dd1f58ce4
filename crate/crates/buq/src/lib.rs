//! Bayesian uncertainty quantification for small image classifiers.
//!
//! `buq` trains classifier ensembles from scratch, approximates the
//! parameter posterior with deep ensembles or Monte-Carlo dropout, and
//! decomposes each prediction's uncertainty into a total part `H` (entropy
//! of the posterior predictive distribution) and an epistemic part `I`
//! (mutual information between parameters and label). The joint (H, I)
//! distribution is then analyzed under impulse-noise distributional shifts.
//!
//! The crate is organized to mirror that pipeline:
//!
//! * [`nn`] — minimal dense/convolutional networks, SGD training, the BUQM
//!   model format, and a finite-difference gradient checker;
//! * [`posterior`] — ensemble and dropout posterior sample matrices;
//! * [`uq`] — entropy, mutual information, and per-sample records;
//! * [`data`] — MNIST/CIFAR-10 loading, BT.601 grayscale, impulse noise;
//! * [`analysis`] — joint histograms, accuracy maps, moments, shift deltas;
//! * [`toy`] — an analytic two-parameter model that cross-checks the two
//!   epistemic-uncertainty formulations against each other.
//!
//! The companion guide under `book/` walks through the concepts; its code
//! snippets compile and run as doctests of this crate.

pub mod analysis;
pub mod data;
pub mod error;
pub mod nn;
pub mod posterior;
pub mod tensor;
pub mod toy;
pub mod uq;

pub use error::{Error, Result};
pub use tensor::TensorF32;

#[cfg(doctest)]
pub mod book {
    //! Every fenced Rust block in the guide compiles and runs under
    //! `cargo test --doc`.

    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            pub struct $name;
        };
    }

    chapter!(Introduction, "../../../book/src/introduction.md");
    chapter!(Uncertainty, "../../../book/src/uncertainty.md");
    chapter!(Networks, "../../../book/src/networks.md");
    chapter!(Posteriors, "../../../book/src/posteriors.md");
    chapter!(Datasets, "../../../book/src/datasets.md");
    chapter!(Analysis, "../../../book/src/analysis.md");
    chapter!(ToyModel, "../../../book/src/toy-model.md");
    chapter!(Cli, "../../../book/src/cli.md");
}
