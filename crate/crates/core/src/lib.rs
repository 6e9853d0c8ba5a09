//! Rubric-based judging of dermatology diagnostic narratives: score types,
//! prompt and evaluation text handling, model backends, the benchmark
//! pipeline and supervised + reward-weighted training of a small policy.

pub mod backends;
pub mod bench;
pub mod records;
pub mod scores;
pub mod soreb;
pub mod textproto;
pub mod verify;
