//! Full-range vehicle orientation estimation: losses, geometry, evaluation
//! and a desk-scale training harness.

pub mod error;
pub mod geom;
pub mod losses;
pub mod io;
pub mod metrics;
pub mod synth;
pub mod train;
pub mod landscape;

pub use error::{Error, Result};
pub use geom::{Angle, ConvexPolygon, OrientedBox, Point2};
pub use losses::{GtOrientationTrack, HeadGradient, HeadOutput, LossResult, Method, MethodKind, SmoothL1};
pub use landscape::{Landscape, LandscapeConfig, LandscapeLoss};
pub use metrics::{DetectionRecord, EvalConfig, EvalReport, Evaluation, GtActor};
pub use synth::{Dataset, PerturbConfig, SceneConfig, Split, SynthActor};
pub use train::{Checkpoint, GradcheckConfig, GradcheckReport, ModelParams, TrainConfig, TrainOutcome};
