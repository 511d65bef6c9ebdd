//! Gradient-matching distillation.
//!
//! The loop alternates two phases. A matching phase draws a Poisson batch
//! of real examples, sanitizes its mean clipped gradient with Gaussian
//! noise, and nudges the synthetic features so their gradient points the
//! same way. A fitting phase then trains the network a few steps on the
//! synthetic set so matching happens along a realistic trajectory. Real
//! features influence the synthetic set only through the sanitized means,
//! so the privacy cost is exactly the accounted release sequence.

mod cosine;
mod prior;
mod synthetic;
mod train;

pub use cosine::{matching_loss, matching_loss_and_grad};
pub use prior::{psg_train_with_prior, PriorConfig, PriorReport};
pub use synthetic::SyntheticSet;
pub use train::{default_schedule, psg_train, DistillConfig, DistillReport, EpsilonPoint};
