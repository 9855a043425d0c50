//! Cross-task generalization at desk scale: a tiny text-to-text model,
//! upstream learning over seen few-shot tasks, and few-shot evaluation on
//! unseen tasks scored by average relative gain.

pub mod autodiff;
pub mod fewshot;
pub mod gym;
pub mod metrics;
pub mod model;
pub mod optim;
mod shuffle;
pub mod upstream;
