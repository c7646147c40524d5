//! The training loop: sample, step, validate, decay, checkpoint.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use metasr_core::episode::{sample_episode, sample_vanilla_batch, UtterancePool};
use metasr_core::eval::{evaluate_identification, IdentificationConfig};
use metasr_core::objective::GlobalPrototypes;
use metasr_core::optim::{PlateauSchedule, ScheduleEvent, Sgd};
use metasr_core::rng::{substream, RngState};
use metasr_core::{Encoder, LossBreakdown, TrainBatch, TrainState};

use crate::checkpoint::{Checkpoint, EvalRecord, Header, Layout};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::features::FeatureStore;

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "step,lr,L_e,L_g,val_acc";
pub const BEST_CHECKPOINT: &str = "ckpt_best.bin";

pub fn step_checkpoint_name(step: u64) -> String {
    format!("ckpt_step{step}.bin")
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    pub out_dir: PathBuf,
    pub resume: Option<PathBuf>,
    /// Progress lines on standard error.
    pub verbose: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub losses: LossBreakdown,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxSteps,
    Converged,
}

#[derive(Debug, Clone)]
pub struct FitSummary {
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
    pub steps: u64,
    pub best_val_acc: Option<f64>,
    pub records: Vec<StepRecord>,
    pub stop: StopReason,
    pub encoder: Encoder,
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_row(r: &StepRecord) -> String {
    format!(
        "{},{},{},{},{}",
        r.step,
        r.lr,
        opt_num(r.losses.episode),
        opt_num(r.losses.global),
        opt_num(r.val_acc)
    )
}

/// Validation protocol: `n`-way, one support-length enrollment and
/// `m_query` shortest-query-length tests per speaker.
pub fn validation_config(cfg: &Config, val_speakers: usize) -> IdentificationConfig {
    let (support, qmin, _) = cfg.episode.frame_lengths(&cfg.features);
    IdentificationConfig {
        n_way: cfg.train.val_n_way.unwrap_or(val_speakers.min(10)),
        episodes: cfg.train.val_episodes,
        enroll_frames: support,
        query_frames: qmin,
        test_per_speaker: cfg.episode.m_query,
    }
}

pub fn validate(encoder: &Encoder, val: &FeatureStore, cfg: &Config) -> Result<f64> {
    let icfg = validation_config(cfg, val.num_speakers());
    let mut rng = substream(cfg.train.seed, "validation");
    let rep = evaluate_identification(val, |f| Ok(encoder.embed(f)?.to_f64()), &icfg, &mut rng)?;
    Ok(rep.mean_accuracy)
}

fn check_inputs(cfg: &Config, train: &FeatureStore, val: &FeatureStore) -> Result<()> {
    if let Some(s) = train.speakers().iter().find(|s| val.speakers().contains(s)) {
        return Err(Error::Data(format!("speaker '{s}' appears in both training and validation data")));
    }
    let n = train.num_speakers();
    if cfg.train.mode.uses_episodes() && cfg.episode.n_way > n {
        return Err(Error::Data(format!(
            "episodes need {} speakers but the training manifest has {n}",
            cfg.episode.n_way
        )));
    }
    if n == 0 {
        return Err(Error::Data("training manifest is empty".into()));
    }
    let need = validation_config(cfg, val.num_speakers()).n_way;
    if val.num_speakers() < need.max(2) {
        return Err(Error::Data(format!(
            "validation needs {} speakers, found {}",
            need.max(2),
            val.num_speakers()
        )));
    }
    Ok(())
}

fn batch_for(cfg: &Config, train: &FeatureStore, state: &mut TrainState) -> Result<TrainBatch> {
    let ep = &cfg.episode;
    Ok(if cfg.train.mode.uses_episodes() {
        TrainBatch::Episode(sample_episode(train, ep, &cfg.features, &mut state.rng)?)
    } else {
        let size = cfg.train.batch_size.unwrap_or(ep.n_way * (ep.k_shot + ep.m_query));
        let (frames, _, _) = ep.frame_lengths(&cfg.features);
        TrainBatch::Vanilla(sample_vanilla_batch(train, size, frames, &mut state.rng)?)
    })
}

/// A freshly initialized state; everything random derives from
/// `cfg.train.seed`.
pub fn initial_state(cfg: &Config, classes: usize) -> Result<TrainState> {
    let seed = cfg.train.seed;
    let encoder = Encoder::new(cfg.encoder.clone(), &mut substream(seed, "init"))?;
    let omega = GlobalPrototypes::random(classes, cfg.encoder.embedding_dim, &mut substream(seed, "omega"));
    let sgd = Sgd::new(cfg.train.momentum as f32, cfg.train.weight_decay as f32);
    Ok(TrainState::new(encoder, omega, cfg.train.lr_init, sgd, substream(seed, "sampling")))
}

struct Run<'a> {
    cfg: &'a Config,
    out: &'a Path,
    speakers: Vec<String>,
    history: Vec<EvalRecord>,
    schedule: PlateauSchedule,
}

impl Run<'_> {
    fn checkpoint(&self, state: &TrainState, path: &Path) -> Result<()> {
        let header = Header {
            config: self.cfg.clone(),
            step: state.step,
            lr: state.lr,
            schedule: self.schedule.clone(),
            rng: RngState::capture(&state.rng),
            train_speakers: self.speakers.clone(),
            history: self.history.clone(),
            tool_version: crate::VERSION.to_string(),
            layout: Layout { params: vec![], buffers: vec![], omega: 0, momentum: vec![] },
        };
        Checkpoint { header, state: state.clone() }.save(path)
    }

    fn write_metrics(&self, rows: &str) -> Result<()> {
        crate::write_atomic(&self.out.join(METRICS_FILE), rows.as_bytes())
    }
}

/// Rows of an earlier metrics log up to and including `step`.
fn previous_rows(out: &Path, step: u64) -> Result<String> {
    let path = out.join(METRICS_FILE);
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let mut rows = String::new();
    for line in text.lines().skip(1) {
        let s: u64 = line.split(',').next().and_then(|v| v.parse().ok()).ok_or_else(|| {
            Error::Data(format!("{}: malformed row '{line}'", path.display()))
        })?;
        if s <= step {
            rows.push_str(line);
            rows.push('\n');
        }
    }
    Ok(rows)
}

pub fn fit(cfg: &Config, train: &FeatureStore, val: &FeatureStore, opts: &FitOptions) -> Result<FitSummary> {
    cfg.validate()?;
    check_inputs(cfg, train, val)?;
    let out = opts.out_dir.as_path();
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let loss_cfg = cfg.loss();
    let t = &cfg.train;

    let (mut state, mut run, mut rows) = match &opts.resume {
        None => {
            let state = initial_state(cfg, train.num_speakers())?;
            let schedule = PlateauSchedule::new(t.lr_init, t.lr_decay_factor, t.patience, t.max_plateaus);
            let run = Run { cfg, out, speakers: train.speakers().to_vec(), history: vec![], schedule };
            (state, run, String::new())
        }
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.header.config != *cfg {
                return Err(Error::Usage(format!("{}: checkpoint was written with a different config", path.display())));
            }
            if ck.header.train_speakers != train.speakers() {
                return Err(Error::Data(format!("{}: checkpoint was trained on other speakers", path.display())));
            }
            let rows = previous_rows(out, ck.header.step)?;
            let run = Run {
                cfg,
                out,
                speakers: ck.header.train_speakers.clone(),
                history: ck.header.history.clone(),
                schedule: ck.header.schedule.clone(),
            };
            (ck.state, run, rows)
        }
    };

    let mut records = Vec::new();
    let mut best_path = Some(out.join(BEST_CHECKPOINT)).filter(|p| opts.resume.is_some() && p.exists());
    let mut stop = StopReason::MaxSteps;
    let mut last_saved = None;
    while state.step < t.max_steps {
        let batch = batch_for(cfg, train, &mut state)?;
        let lr = state.lr;
        let losses = state.train_step(&batch, &loss_cfg).map_err(Error::from)?;
        let step = state.step;
        let mut record = StepRecord { step, lr, losses, val_acc: None };
        let mut finished = step == t.max_steps;
        if step % t.eval_every == 0 || finished {
            let acc = validate(&state.encoder, val, cfg)?;
            record.val_acc = Some(acc);
            run.history.push(EvalRecord { step, val_acc: acc });
            let event = run.schedule.observe(acc);
            state.lr = run.schedule.lr;
            if event == ScheduleEvent::Improved {
                let p = out.join(BEST_CHECKPOINT);
                run.checkpoint(&state, &p)?;
                best_path = Some(p);
            }
            if event == ScheduleEvent::Stop {
                stop = StopReason::Converged;
                finished = true;
            }
            if opts.verbose {
                eprintln!("step {step} lr {lr} loss {} val_acc {acc:.4} ({event:?})", losses.total);
            }
        }
        writeln!(rows, "{}", metrics_row(&record)).expect("string write");
        records.push(record);
        if step % t.checkpoint_every == 0 || finished {
            run.checkpoint(&state, &out.join(step_checkpoint_name(step)))?;
            run.write_metrics(&format!("{METRICS_HEADER}\n{rows}"))?;
            last_saved = Some(step);
        }
        if finished {
            break;
        }
    }
    if last_saved != Some(state.step) {
        run.checkpoint(&state, &out.join(step_checkpoint_name(state.step)))?;
        run.write_metrics(&format!("{METRICS_HEADER}\n{rows}"))?;
    }
    Ok(FitSummary {
        final_checkpoint: out.join(step_checkpoint_name(state.step)),
        best_checkpoint: best_path,
        steps: state.step,
        best_val_acc: run.schedule.best,
        records,
        stop,
        encoder: state.encoder,
    })
}
