//! Training-free visual-token pruning for OCR-style vision-language decoders.
//!
//! The pipeline runs in two stages over an `N x D` matrix of visual token
//! embeddings:
//!
//! 1. [`tokens::select_dominant`] keeps the `M` tokens with the largest
//!    ℓ2-norms.
//! 2. The remaining tokens are matched to the kept ones by a dustbin-augmented
//!    optimal-transport plan ([`transport::sinkhorn`]) and folded into them
//!    with a weighted sum ([`transport::merge`]).
//!
//! The pruning ratio can be fixed or derived per image from the mean
//! inter-token cosine similarity and a Sobel edge density of the page
//! ([`density`]). [`costmodel`] estimates decoder prefill FLOPs for a given
//! token budget and [`diagnostics`] measures how well norm rankings overlap
//! with externally captured attention rankings.
//!
//! ```
//! use rtprune::pipeline::{rtprune, PruneRequest, RatioMode};
//! use rtprune::tokens::TokenMatrix;
//!
//! let tokens = TokenMatrix::from_rows(&[
//!     vec![10.0, 0.0],
//!     vec![0.0, 10.0],
//!     vec![1.0, 0.0],
//!     vec![0.0, 1.0],
//! ])
//! .unwrap();
//! let (pruned, report) = rtprune(&PruneRequest::new(tokens, RatioMode::Fixed(0.5))).unwrap();
//! assert_eq!(pruned.rows(), 2);
//! assert_eq!(report.kept_indices, vec![0, 1]);
//! ```

pub mod cli;
pub mod costmodel;
pub mod density;
pub mod diagnostics;
mod error;
pub mod io;
pub mod parallel;
pub mod pipeline;
pub mod tokens;
pub mod transport;

pub use error::{Error, Result};
