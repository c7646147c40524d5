//! One optimization step on an episode or a vanilla batch.

use alloc::vec::Vec;

use crate::encoder::Encoder;
use crate::episode::{Episode, VanillaBatch};
use crate::error::{bail, Result};
use crate::features::FeatureMatrix;
use crate::nn::Param;
use crate::objective::{combined_loss, GlobalPrototypes, LossBreakdown, LossConfig, StepEmbeddings};
use crate::optim::Sgd;
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub enum TrainBatch {
    Episode(Episode),
    Vanilla(VanillaBatch),
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    pub lr: f64,
    pub encoder: Encoder,
    /// Global prototypes, `classes x embedding_dim` row-major.
    pub omega: Param,
    pub classes: usize,
    pub optimizer: Sgd,
    /// Stream that draws episodes and batches.
    pub rng: Rng,
}

impl TrainState {
    pub fn new(encoder: Encoder, omega: GlobalPrototypes, lr: f64, optimizer: Sgd, rng: Rng) -> Self {
        let classes = omega.classes();
        let flat: Vec<f32> = omega.rows.iter().flatten().map(|&v| v as f32).collect();
        TrainState { step: 0, lr, encoder, omega: Param::new(flat), classes, optimizer, rng }
    }

    pub fn global_prototypes(&self) -> GlobalPrototypes {
        let dim = self.encoder.config().embedding_dim;
        GlobalPrototypes {
            rows: self.omega.value.chunks(dim).map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect(),
        }
    }

    /// Forward, backward and one optimizer update. Aborts without touching
    /// the parameters when the loss is not finite.
    pub fn train_step(&mut self, batch: &TrainBatch, loss: &LossConfig) -> Result<LossBreakdown> {
        let mode = loss.mode;
        let (inputs, n_support, n_way, labels): (Vec<&FeatureMatrix>, usize, usize, Labels) = match batch {
            TrainBatch::Episode(ep) => {
                if !mode.uses_episodes() {
                    bail!(Config, "mode {mode} trains on fixed-length batches, got an episode");
                }
                let inputs = ep.support.iter().chain(&ep.query).map(|i| &i.features).collect();
                let labels = Labels {
                    support_local: ep.support.iter().map(|i| i.local).collect(),
                    support_global: ep.support.iter().map(|i| i.global).collect(),
                    query_local: ep.query.iter().map(|i| i.local).collect(),
                    query_global: ep.query.iter().map(|i| i.global).collect(),
                };
                (inputs, ep.support.len(), ep.n_way, labels)
            }
            TrainBatch::Vanilla(b) => {
                if mode.uses_episodes() {
                    bail!(Config, "mode {mode} trains on episodes, got a fixed-length batch");
                }
                let inputs = b.items.iter().map(|(f, _)| f).collect();
                let labels = Labels {
                    support_local: Vec::new(),
                    support_global: b.items.iter().map(|(_, g)| *g).collect(),
                    query_local: Vec::new(),
                    query_global: Vec::new(),
                };
                (inputs, b.items.len(), 0, labels)
            }
        };
        if labels.support_global.iter().chain(&labels.query_global).any(|&g| g >= self.classes) && mode.uses_global() {
            bail!(Label, "global label outside 0..{}", self.classes);
        }

        self.encoder.zero_grad();
        self.omega.zero_grad();
        let owned: Vec<FeatureMatrix> = inputs.into_iter().cloned().collect();
        let emb = self.encoder.forward_train(&owned)?;
        let emb64: Vec<Vec<f64>> = emb.iter().map(|e| e.iter().map(|&v| f64::from(v)).collect()).collect();
        let (support, query) = emb64.split_at(n_support);
        let omega = mode.uses_global().then(|| self.global_prototypes());
        let step = StepEmbeddings {
            support,
            support_local: &labels.support_local,
            support_global: &labels.support_global,
            query,
            query_local: &labels.query_local,
            query_global: &labels.query_global,
            n_way,
        };
        let obj = combined_loss(&step, omega.as_ref(), loss)?;
        let b = obj.breakdown;
        let grads_finite = obj.grad_support.iter().chain(&obj.grad_query).flatten().all(|g| g.is_finite());
        if !b.total.is_finite() || !grads_finite {
            bail!(
                Numeric,
                "non-finite loss at step {} (lr {}): episode {:?}, global {:?}, total {}",
                self.step,
                self.lr,
                b.episode,
                b.global,
                b.total
            );
        }

        let grad_emb: Vec<Vec<f32>> =
            obj.grad_support.iter().chain(&obj.grad_query).map(|g| g.iter().map(|&v| v as f32).collect()).collect();
        self.encoder.backward(&grad_emb);
        if let Some(go) = &obj.grad_omega {
            for (dst, src) in self.omega.grad.iter_mut().zip(go.iter().flatten()) {
                *dst = *src as f32;
            }
        }

        let lr = self.lr as f32;
        let opt = &mut self.optimizer;
        let mut index = 0;
        self.encoder.visit_params_mut(&mut |p| {
            opt.update(index, p, lr);
            index += 1;
        });
        if mode.uses_global() {
            opt.update(index, &mut self.omega, lr);
        }
        self.step += 1;
        Ok(b)
    }
}

struct Labels {
    support_local: Vec<usize>,
    support_global: Vec<usize>,
    query_local: Vec<usize>,
    query_global: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::episode::{sample_episode, sample_vanilla_batch, EpisodeConfig};
    use crate::features::FeatureConfig;
    use crate::objective::Mode;
    use crate::rng::substream;
    use alloc::vec;

    fn pool() -> Vec<Vec<FeatureMatrix>> {
        let mut rng = substream(5, "pool");
        (0..4)
            .map(|s| {
                (0..3)
                    .map(|_| {
                        let data: Vec<f32> = (0..40 * 220)
                            .map(|i| {
                                let band = i / 220;
                                let base = if band % 4 == s { 2.0 } else { 0.2 };
                                base * crate::nn::normal(&mut rng) as f32
                            })
                            .collect();
                        FeatureMatrix::new(40, 220, data, 0.01).unwrap()
                    })
                    .collect()
            })
            .collect()
    }

    fn state(lr: f64) -> TrainState {
        let enc = Encoder::new(EncoderConfig::small(), &mut substream(0, "init")).unwrap();
        let omega = GlobalPrototypes::random(4, 256, &mut substream(0, "omega"));
        TrainState::new(enc, omega, lr, Sgd::new(0.9, 1e-4), substream(0, "sampling"))
    }

    fn episode() -> Episode {
        let cfg = EpisodeConfig { n_way: 3, k_shot: 1, m_query: 2, ..Default::default() };
        sample_episode(&pool(), &cfg, &FeatureConfig::default(), &mut substream(1, "ep")).unwrap()
    }

    #[test]
    fn repeated_step_on_fixed_episode_descends() {
        let mut st = state(0.01);
        let batch = TrainBatch::Episode(episode());
        let l1 = st.train_step(&batch, &LossConfig::default()).unwrap();
        let l2 = st.train_step(&batch, &LossConfig::default()).unwrap();
        assert!(l2.total < l1.total, "{l1} -> {l2}");
        assert_eq!(st.step, 2);
    }

    #[test]
    fn zero_lr_keeps_parameters_bitwise() {
        let mut st = state(0.0);
        let mut before = Vec::new();
        st.encoder.visit_params(&mut |p| before.push(p.value.clone()));
        let omega = st.omega.value.clone();
        st.train_step(&TrainBatch::Episode(episode()), &LossConfig::default()).unwrap();
        let mut after = Vec::new();
        st.encoder.visit_params(&mut |p| after.push(p.value.clone()));
        assert_eq!(before, after);
        assert_eq!(omega, st.omega.value);
    }

    #[test]
    fn meta_mode_leaves_omega_alone() {
        let mut st = state(0.05);
        let omega = st.omega.value.clone();
        let b = st.train_step(&TrainBatch::Episode(episode()), &LossConfig { lambda: 1.0, mode: Mode::Meta }).unwrap();
        assert!(b.global.is_none());
        assert_eq!(omega, st.omega.value);
    }

    #[test]
    fn vanilla_batches_train_and_modes_are_checked() {
        let mut st = state(0.05);
        let vb = sample_vanilla_batch(&pool(), 6, 198, &mut substream(2, "vb")).unwrap();
        let vanilla = LossConfig { lambda: 1.0, mode: Mode::Vanilla };
        let b = st.train_step(&TrainBatch::Vanilla(vb.clone()), &vanilla).unwrap();
        assert!(b.episode.is_none() && b.global.is_some());
        assert!(st.train_step(&TrainBatch::Vanilla(vb), &LossConfig::default()).is_err());
        assert!(st.train_step(&TrainBatch::Episode(episode()), &vanilla).is_err());
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let mut st = state(0.05);
        st.omega.value[0] = f32::NAN;
        let err = st.train_step(&TrainBatch::Episode(episode()), &LossConfig::default()).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(matches!(err, crate::Error::Numeric(_)));
        assert!(msg.contains("step 0") && msg.contains("lr 0.05"), "{msg}");
        let _ = vec![0];
    }
}
