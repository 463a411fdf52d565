//! Toolkit for synthesizing unanswerable video-QA data and measuring how well
//! black-box models decline questions that a video cannot answer.
//!
//! The pipeline runs `corpus` → `perturb` → `qagen` → `harness`, with
//! `judge` classifying responses, `pope` providing an existence-probe
//! baseline, `export` producing SFT/DPO training files and `review`
//! holding the human curation state.

pub mod corpus;
pub mod export;
pub mod gateway;
pub mod harness;
pub mod jsonl;
pub mod judge;
pub mod perturb;
pub mod pope;
pub mod prompts;
pub mod qagen;
pub mod review;
pub mod rng;
