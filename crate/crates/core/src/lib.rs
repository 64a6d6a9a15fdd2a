//! Replay-attack spoofing countermeasures.
//!
//! Front-ends: FFT, constant-Q and db4 wavelet spectrograms ([`tf`]); CQCC and
//! LPCC cepstra ([`cepstral`]); the EEMD difference spectrogram ([`eemd`]).
//! Back-ends: GMM log-likelihood ratio, i-vector + linear SVM ([`models`]).
//! Score fusion and EER evaluation live in [`eval`], the synthetic replay
//! corpus and trial protocols in [`corpus`], and the file-driven workflow
//! behind the `antispoof` binary in [`pipeline`].

pub mod audio;
pub mod cepstral;
pub mod container;
pub mod corpus;
pub mod eemd;
pub mod eval;
pub mod models;
pub mod neural;
pub mod pipeline;
pub mod tf;
