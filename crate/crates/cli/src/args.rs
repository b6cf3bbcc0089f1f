use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use amodal_core::expander::{LossSpace, Schedule, ScaleTask, TrainConfig};
use amodal_core::metrics::{EvalConfig, Interpolation, UncertainPolicy};
use amodal_core::pno::PnOConfig;
use amodal_core::synthetic::SceneConfig;
use amodal_core::{StratumClosure, TrackerConfig};

#[derive(Debug, Parser)]
#[command(name = "amodal-kit", version, about = "Amodal tracking evaluation and training toolkit")]
pub struct Cli {
    /// Worker threads for parallel stages; 0 means one per core
    #[arg(long, global = true, env = "AMODAL_KIT_WORKERS", default_value_t = 0)]
    pub workers: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Occlusion-stratified detection AP and Track-AP
    Evaluate(EvaluateArgs),
    /// Kalman/IoU tracking of per-frame detections
    Track(TrackArgs),
    /// Paste masked segments along interpolated trajectories
    Augment(AugmentArgs),
    /// Dataset occlusion statistics
    Stats(StatsArgs),
    /// Check annotation invariants; violations are reported, not fatal
    Validate(ValidateArgs),
    /// Train the amodal box expander on a synthetic task
    TrainExpander(TrainExpanderArgs),
    /// Generate a synthetic dataset, detections and segment bank
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Closure {
    HalfOpen,
    UpperClosed,
}

impl From<Closure> for StratumClosure {
    fn from(c: Closure) -> Self {
        match c {
            Closure::HalfOpen => StratumClosure::HalfOpen,
            Closure::UpperClosed => StratumClosure::UpperClosed,
        }
    }
}

impl From<StratumClosure> for Closure {
    fn from(c: StratumClosure) -> Self {
        match c {
            StratumClosure::HalfOpen => Closure::HalfOpen,
            StratumClosure::UpperClosed => Closure::UpperClosed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Uncertain {
    Ignore,
    Include,
}

impl From<Uncertain> for UncertainPolicy {
    fn from(u: Uncertain) -> Self {
        match u {
            Uncertain::Ignore => UncertainPolicy::Ignore,
            Uncertain::Include => UncertainPolicy::Include,
        }
    }
}

impl From<UncertainPolicy> for Uncertain {
    fn from(u: UncertainPolicy) -> Self {
        match u {
            UncertainPolicy::Ignore => Uncertain::Ignore,
            UncertainPolicy::Include => Uncertain::Include,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Interp {
    /// Precision sampled at 101 recall points
    Points101,
    /// Exact area under the precision envelope
    AllPoints,
}

impl From<Interp> for Interpolation {
    fn from(i: Interp) -> Self {
        match i {
            Interp::Points101 => Interpolation::Points101,
            Interp::AllPoints => Interpolation::AllPoints,
        }
    }
}

impl From<Interpolation> for Interp {
    fn from(i: Interpolation) -> Self {
        match i {
            Interpolation::Points101 => Interp::Points101,
            Interpolation::AllPoints => Interp::AllPoints,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Ground-truth annotation file
    #[arg(long)]
    pub annotations: PathBuf,
    /// Results file (JSON array of detections, optionally with track_id)
    #[arg(long)]
    pub results: PathBuf,
    /// IoU threshold(s): a number, a comma-separated list, or "sweep" for 0.50:0.95:0.05
    #[arg(long, default_value = "0.5")]
    pub iou: String,
    /// "default" or a comma-separated list of stratum names
    #[arg(long, default_value = "default")]
    pub strata: String,
    /// Whether visibility bands include their lower or upper end point
    #[arg(long, value_enum, default_value_t = Closure::from(StratumClosure::default()))]
    pub closure: Closure,
    /// Treatment of ground truth flagged uncertain
    #[arg(long, value_enum, default_value_t = Uncertain::from(EvalConfig::default().uncertain_policy))]
    pub uncertain: Uncertain,
    #[arg(long, value_enum, default_value_t = Interp::from(EvalConfig::default().interpolation))]
    pub interpolation: Interp,
    /// Highest-scoring detections kept per image
    #[arg(long, default_value_t = EvalConfig::default().max_detections_per_image)]
    pub max_dets: usize,
    /// Report destination
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Annotation file supplying videos and frame order
    #[arg(long)]
    pub annotations: PathBuf,
    /// Detections (results format, track_id ignored)
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long, default_value_t = TrackerConfig::default().iou_gate)]
    pub iou_gate: f64,
    /// Frames a confirmed track may go unmatched before it is dropped
    #[arg(long, default_value_t = TrackerConfig::default().max_coast)]
    pub max_coast: u32,
    /// Matches needed before a track is confirmed
    #[arg(long, default_value_t = TrackerConfig::default().min_hits)]
    pub min_hits: u32,
    #[arg(long, default_value_t = TrackerConfig::default().process_noise_scale)]
    pub process_noise: f64,
    #[arg(long, default_value_t = TrackerConfig::default().measurement_noise_scale)]
    pub measurement_noise: f64,
    /// Do not emit predicted boxes for unmatched tracks
    #[arg(long)]
    pub no_coast: bool,
    /// Coasted score = last score * decay^frames_unmatched
    #[arg(long, default_value_t = TrackerConfig::default().coast_score_decay)]
    pub coast_score_decay: f64,
    /// Tracked results destination
    #[arg(long)]
    pub out: PathBuf,
}

impl TrackArgs {
    pub fn config(&self) -> TrackerConfig {
        TrackerConfig {
            iou_gate: self.iou_gate,
            max_coast: self.max_coast,
            min_hits: self.min_hits,
            process_noise_scale: self.process_noise,
            measurement_noise_scale: self.measurement_noise,
            emit_coasted: !self.no_coast,
            coast_score_decay: self.coast_score_decay,
        }
    }
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    /// Segment bank manifest
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long, default_value_t = PnOConfig::default().seed)]
    pub seed: u64,
    #[arg(long, default_value_t = PnOConfig::default().n_segments_range.0)]
    pub min_segments: usize,
    #[arg(long, default_value_t = PnOConfig::default().n_segments_range.1)]
    pub max_segments: usize,
    /// Smallest pasted side length in pixels
    #[arg(long, default_value_t = PnOConfig::default().size_range.0)]
    pub min_size: u32,
    /// Largest pasted side length in pixels
    #[arg(long, default_value_t = PnOConfig::default().size_range.1)]
    pub max_size: u32,
    /// Frames per window; each window gets its own placements
    #[arg(long, default_value_t = PnOConfig::default().sequence_length)]
    pub sequence_length: usize,
    /// Segments whose mask covers less of their box than this are skipped
    #[arg(long, default_value_t = PnOConfig::default().mask_fill_min)]
    pub mask_fill_min: f64,
    /// Keep pasted segments fully inside the frame
    #[arg(long)]
    pub no_out_of_frame: bool,
    /// Same segment size in the first and last frame
    #[arg(long)]
    pub lock_size: bool,
    /// Lower the visibility of existing boxes covered by pasted segments
    #[arg(long)]
    pub recompute_occludee_visibility: bool,
    /// Directory of input frames, named by file_name or <image_id>.png
    #[arg(long)]
    pub frames_in: Option<PathBuf>,
    /// Directory for composited frames
    #[arg(long, requires = "frames_in")]
    pub frames_out: Option<PathBuf>,
    /// Augmented annotation destination
    #[arg(long)]
    pub out: PathBuf,
}

impl AugmentArgs {
    pub fn config(&self) -> PnOConfig {
        PnOConfig {
            n_segments_range: (self.min_segments, self.max_segments),
            size_range: (self.min_size, self.max_size),
            sequence_length: self.sequence_length,
            mask_fill_min: self.mask_fill_min,
            seed: self.seed,
            allow_out_of_frame: !self.no_out_of_frame,
            lock_size: self.lock_size,
            recompute_occludee_visibility: self.recompute_occludee_visibility,
        }
    }
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, value_enum, default_value_t = Closure::from(StratumClosure::default()))]
    pub closure: Closure,
    /// Statistics destination
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    /// Violation report destination
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    /// Amodal box is the modal box scaled about its centre
    Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LrSchedule {
    WarmupCosine,
    Constant,
}

impl From<Schedule> for LrSchedule {
    fn from(s: Schedule) -> Self {
        match s {
            Schedule::WarmupCosine => LrSchedule::WarmupCosine,
            Schedule::Constant => LrSchedule::Constant,
        }
    }
}

impl From<LrSchedule> for Schedule {
    fn from(s: LrSchedule) -> Self {
        match s {
            LrSchedule::WarmupCosine => Schedule::WarmupCosine,
            LrSchedule::Constant => Schedule::Constant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Space {
    /// Smooth-L1 on delta targets
    Delta,
    /// Smooth-L1 on decoded box coordinates
    Box,
}

impl From<LossSpace> for Space {
    fn from(s: LossSpace) -> Self {
        match s {
            LossSpace::Delta => Space::Delta,
            LossSpace::Box => Space::Box,
        }
    }
}

impl From<Space> for LossSpace {
    fn from(s: Space) -> Self {
        match s {
            Space::Delta => LossSpace::Delta,
            Space::Box => LossSpace::Box,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainExpanderArgs {
    #[arg(long, value_enum, default_value_t = Task::Scale)]
    pub task: Task,
    /// Amodal-to-modal scale of the synthetic task
    #[arg(long, default_value_t = ScaleTask::default().scale)]
    pub scale: f64,
    #[arg(long, default_value_t = ScaleTask::default().feature_dim)]
    pub feature_dim: usize,
    /// Relative jitter of synthetic proposals
    #[arg(long, default_value_t = ScaleTask::default().jitter)]
    pub jitter: f64,
    #[arg(long, default_value_t = 4096)]
    pub train_samples: usize,
    #[arg(long, default_value_t = 512)]
    pub eval_samples: usize,
    #[arg(long, default_value_t = TrainConfig::default().base_lr)]
    pub base_lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().iterations)]
    pub iterations: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().dropout_prob)]
    pub dropout: f64,
    #[arg(long, value_enum, default_value_t = LrSchedule::from(TrainConfig::default().schedule))]
    pub schedule: LrSchedule,
    #[arg(long, default_value_t = TrainConfig::default().warmup_iterations)]
    pub warmup_iterations: usize,
    /// Use SGD with this momentum instead of plain SGD
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long, value_enum, default_value_t = Space::from(TrainConfig::default().loss_space))]
    pub loss_space: Space,
    #[arg(long, default_value_t = TrainConfig::default().smooth_l1_beta)]
    pub smooth_l1_beta: f64,
    #[arg(long, default_value_t = TrainConfig::default().hidden)]
    pub hidden: usize,
    /// Iterations between loss-curve entries
    #[arg(long, default_value_t = TrainConfig::default().log_every)]
    pub log_every: usize,
    #[arg(long, default_value_t = TrainConfig::default().seed)]
    pub seed: u64,
    /// Parameter file destination
    #[arg(long)]
    pub out: PathBuf,
    /// Loss-curve CSV destination [default: <out>.loss.csv]
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = SceneConfig::default().n_videos)]
    pub videos: usize,
    #[arg(long, default_value_t = SceneConfig::default().frames_per_video)]
    pub frames: usize,
    #[arg(long, default_value_t = SceneConfig::default().objects_per_video.0)]
    pub min_objects: usize,
    #[arg(long, default_value_t = SceneConfig::default().objects_per_video.1)]
    pub max_objects: usize,
    #[arg(long, default_value_t = SceneConfig::default().n_categories)]
    pub categories: usize,
    #[arg(long, default_value_t = SceneConfig::default().frame.width)]
    pub width: f64,
    #[arg(long, default_value_t = SceneConfig::default().frame.height)]
    pub height: f64,
    /// Fraction of boxes flagged uncertain
    #[arg(long, default_value_t = SceneConfig::default().uncertain_prob)]
    pub uncertain_prob: f64,
    #[arg(long, default_value_t = SceneConfig::default().seed)]
    pub seed: u64,
    /// Also write detections derived from the ground truth
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Boxes less visible than this get no detection
    #[arg(long, default_value_t = 0.1)]
    pub detect_min_visibility: f64,
    /// Fraction of remaining detections dropped at random
    #[arg(long, default_value_t = 0.1)]
    pub detect_drop: f64,
    /// Detection jitter relative to box size
    #[arg(long, default_value_t = 0.02)]
    pub detect_jitter: f64,
    /// Also write a segment bank into this directory
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub bank_size: usize,
    /// Annotation destination
    #[arg(long)]
    pub out: PathBuf,
}
