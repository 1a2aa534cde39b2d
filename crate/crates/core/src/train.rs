//! Stage one: the private training loop over ranking triples, plus
//! candidate-list generation.
//!
//! Each step Poisson-samples triples (every example independently with
//! probability q = m/n), clips per-example gradients per parameter group,
//! sums them, adds one Gaussian draw per coordinate of each group sum
//! (sigma_g = z * C_g, drawn in user/item/extra order), and applies
//! theta <- theta - (eta_t/m) * sum. With z = 0 no noise is drawn and the
//! loop is plain SGD.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::model::{per_example_grad, Checkpoint, ModelParams, Scorer, Triple, CHECKPOINT_VERSION};
use crate::privacy::{accounted_epsilon, clip_grad, ClipBounds, PrivacySpec};
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Training hyperparameters and the privacy mechanism wiring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub scorer: Scorer,
    /// Embedding dimension for both towers.
    pub d: usize,
    pub learning_rate: f64,
    /// Per-step multiplicative decay on the learning rate (1.0 = constant).
    #[serde(default = "default_decay")]
    pub lr_decay: f64,
    /// Ridge weight on the touched parameters of each example.
    pub lambda: f64,
    /// Expected batch size m; the sampling rate is q = m / n.
    pub batch_expected: usize,
    pub steps: usize,
    pub bounds: ClipBounds,
    /// Mechanism noise multiplier z (sigma_g = z * C_g). Zero disables the
    /// mechanism; infinite clip bounds are legal only in that case.
    pub noise_multiplier: f64,
    /// delta = n^(-delta_exponent); must keep delta below 1/n.
    #[serde(default = "default_delta_exponent")]
    pub delta_exponent: f64,
    pub seed: u64,
}

fn default_decay() -> f64 {
    1.0
}
fn default_delta_exponent() -> f64 {
    1.5
}

impl TrainConfig {
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.batch_expected == 0 || self.batch_expected > dataset.n_train() {
            return Err(Error::Config(format!(
                "expected batch {} outside [1, n = {}]",
                self.batch_expected,
                dataset.n_train()
            )));
        }
        if self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
            || !self.learning_rate.is_finite()
        {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        if self.noise_multiplier < 0.0 {
            return Err(Error::Config("noise multiplier must be nonnegative".into()));
        }
        if self.delta_exponent <= 1.0 {
            return Err(Error::Config(
                "delta exponent must exceed 1 so that delta << 1/n".into(),
            ));
        }
        self.bounds.validate()?;
        if !self.bounds.is_finite() && self.noise_multiplier > 0.0 {
            return Err(Error::Config(
                "infinite clip bounds are only legal with zero noise".into(),
            ));
        }
        Ok(())
    }

    /// Number of sanitized parameter groups under this scorer.
    pub fn group_count(&self) -> usize {
        match self.scorer {
            Scorer::Mf => 2,
            Scorer::NeuMf => 3,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: usize,
    /// Mean per-example loss over the step's batch (NaN-free; None when the
    /// batch was empty).
    pub batch_loss: Option<f64>,
    pub epsilon_so_far: f64,
}

/// Reason training stopped early, with the last good step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Divergence {
    pub step: usize,
    pub reason: String,
}

/// Everything a finished (or aborted) run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final parameters; on divergence, the last finite ones.
    pub params: ModelParams,
    pub privacy: PrivacySpec,
    pub log: Vec<TrainLogEntry>,
    pub divergence: Option<Divergence>,
    /// Steps actually applied.
    pub steps_done: usize,
}

impl TrainOutcome {
    pub fn checkpoint(
        &self,
        rng_batch: &rand_chacha::ChaCha20Rng,
        rng_noise: &rand_chacha::ChaCha20Rng,
    ) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            step: self.steps_done,
            params: self.params.clone(),
            rng_batch: rng_batch.clone(),
            rng_noise: rng_noise.clone(),
        }
    }
}

/// Certified epsilon for a finished run; infinite when the mechanism is off.
fn certify(config: &TrainConfig, q: f64, steps: usize, delta: f64) -> Result<f64> {
    if config.noise_multiplier == 0.0 {
        return Ok(f64::INFINITY);
    }
    accounted_epsilon(
        config.noise_multiplier,
        config.group_count(),
        q,
        steps,
        delta,
    )
}

/// Receiver for periodic checkpoints during training.
pub type CheckpointSink<'a> = &'a mut dyn FnMut(&Checkpoint) -> Result<()>;

/// Run the private training loop. Deterministic given (dataset, config).
///
/// `checkpoint_sink`, when given, is called every `checkpoint_every` steps
/// and once at the end (or at abort) with a resumable snapshot.
pub fn train_dp_with_sink(
    dataset: &Dataset,
    config: &TrainConfig,
    checkpoint_every: usize,
    mut checkpoint_sink: Option<CheckpointSink>,
) -> Result<TrainOutcome> {
    config.validate(dataset)?;
    let n = dataset.n_train();
    let q = config.batch_expected as f64 / n as f64;
    let delta = dataset.delta(config.delta_exponent);
    // The accountant requires delta well below 1/n; irrelevant when the
    // mechanism is off.
    if config.noise_multiplier > 0.0 && delta >= 1.0 / n as f64 {
        return Err(Error::Config(format!(
            "delta {delta} is not below 1/n = {}",
            1.0 / n as f64
        )));
    }

    let mut params = ModelParams::init(
        config.scorer,
        config.d,
        dataset.n_users,
        dataset.n_items,
        config.seed,
    )?;
    let mut rng_batch = stream_rng(config.seed, Stream::Batch);
    let mut rng_noise = stream_rng(config.seed, Stream::Noise);

    let triples: Vec<Triple> = dataset
        .train
        .iter()
        .zip(&dataset.negatives)
        .map(|(&(u, v), &(_, v_neg))| Triple {
            user: u,
            pos_item: v,
            neg_item: v_neg,
        })
        .collect();

    let d = config.d;
    let mut sum_user = vec![0.0; dataset.n_users * d];
    let mut sum_item = vec![0.0; dataset.n_items * d];
    let mut sum_w = vec![0.0; params.w.len()];
    let mut log = Vec::new();
    let mut lr = config.learning_rate;
    let mut last_good = params.clone();
    let mut divergence = None;
    let mut steps_done = 0;

    for step in 0..config.steps {
        sum_user.iter_mut().for_each(|x| *x = 0.0);
        sum_item.iter_mut().for_each(|x| *x = 0.0);
        sum_w.iter_mut().for_each(|x| *x = 0.0);

        // Poisson sampling: one uniform draw per example, in index order.
        let mut batch_loss_sum = 0.0;
        let mut batch_count = 0usize;
        let mut bad: Option<String> = None;
        for triple in &triples {
            let include = rng_batch.gen::<f64>() < q;
            if !include {
                continue;
            }
            let mut grad = per_example_grad(&params, triple, config.lambda)?;
            clip_grad(&mut grad, &config.bounds);
            let loss = crate::model::bpr_loss(&params, triple, config.lambda)?;
            if !loss.is_finite() {
                bad = Some(format!("non-finite loss on triple {triple:?}"));
                break;
            }
            batch_loss_sum += loss;
            batch_count += 1;
            let u0 = triple.user as usize * d;
            let p0 = triple.pos_item as usize * d;
            let n0 = triple.neg_item as usize * d;
            for i in 0..d {
                sum_user[u0 + i] += grad.user_grad[i];
                sum_item[p0 + i] += grad.pos_item_grad[i];
                sum_item[n0 + i] += grad.neg_item_grad[i];
            }
            for (acc, g) in sum_w.iter_mut().zip(&grad.w_grad) {
                *acc += g;
            }
        }

        if bad.is_none() && config.noise_multiplier > 0.0 {
            // One Gaussian draw per coordinate per group, fixed order.
            let z = config.noise_multiplier;
            gaussian_add(&mut sum_user, z * config.bounds.user, &mut rng_noise);
            gaussian_add(&mut sum_item, z * config.bounds.item, &mut rng_noise);
            gaussian_add(&mut sum_w, z * config.bounds.extra, &mut rng_noise);
        }

        if bad.is_none() {
            let scale = lr / config.batch_expected as f64;
            for (p, g) in params.user_emb.iter_mut().zip(&sum_user) {
                *p -= scale * g;
            }
            for (p, g) in params.item_emb.iter_mut().zip(&sum_item) {
                *p -= scale * g;
            }
            for (p, g) in params.w.iter_mut().zip(&sum_w) {
                *p -= scale * g;
            }
            if !params.all_finite() {
                bad = Some("non-finite parameter after update".into());
            }
        }

        if let Some(reason) = bad {
            divergence = Some(Divergence { step, reason });
            params = last_good;
            break;
        }

        steps_done = step + 1;
        last_good = params.clone();
        lr *= config.lr_decay;

        let eps_so_far = certify(config, q, steps_done, delta)?;
        log.push(TrainLogEntry {
            step,
            batch_loss: (batch_count > 0).then(|| batch_loss_sum / batch_count as f64),
            epsilon_so_far: eps_so_far,
        });

        if checkpoint_every > 0 && steps_done % checkpoint_every == 0 {
            if let Some(sink) = checkpoint_sink.as_mut() {
                let ckpt = Checkpoint {
                    version: CHECKPOINT_VERSION,
                    step: steps_done,
                    params: params.clone(),
                    rng_batch: rng_batch.clone(),
                    rng_noise: rng_noise.clone(),
                };
                sink(&ckpt)?;
            }
        }
    }

    let epsilon = certify(config, q, steps_done.max(1), delta)?;
    let outcome = TrainOutcome {
        params,
        privacy: PrivacySpec {
            epsilon,
            delta,
            noise_multiplier: config.noise_multiplier,
            accountant_multiplier: crate::privacy::effective_multiplier(
                config.noise_multiplier,
                config.group_count(),
            ),
            sampling_rate: q,
            steps: steps_done,
        },
        log,
        divergence,
        steps_done,
    };

    if let Some(sink) = checkpoint_sink.as_mut() {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            step: steps_done,
            params: outcome.params.clone(),
            rng_batch: rng_batch.clone(),
            rng_noise: rng_noise.clone(),
        };
        sink(&ckpt)?;
    }

    Ok(outcome)
}

/// [`train_dp_with_sink`] without checkpointing.
pub fn train_dp(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_dp_with_sink(dataset, config, 0, None)
}

fn gaussian_add(buf: &mut [f64], sigma: f64, rng: &mut rand_chacha::ChaCha20Rng) {
    if sigma == 0.0 {
        return;
    }
    for x in buf.iter_mut() {
        let eta: f64 = rng.sample(StandardNormal);
        *x += sigma * eta;
    }
}

/// One user's ranked candidates.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct UserList {
    pub items: Vec<(u32, f64)>,
    /// Set when fewer eligible items existed than requested.
    pub truncated: bool,
}

/// Per-user ordered candidate lists of length K (or shorter, flagged).
/// Scores are nonincreasing, items unique, and none of a user's training
/// positives appear.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RecLists {
    pub k: usize,
    pub lists: Vec<UserList>,
}

impl RecLists {
    /// Item ids only, per user.
    pub fn item_lists(&self) -> Vec<Vec<u32>> {
        self.lists
            .iter()
            .map(|l| l.items.iter().map(|&(v, _)| v).collect())
            .collect()
    }

    /// Truncate every list to the first k entries.
    pub fn truncate_to(&self, k: usize) -> RecLists {
        RecLists {
            k,
            lists: self
                .lists
                .iter()
                .map(|l| UserList {
                    items: l.items.iter().take(k).copied().collect(),
                    truncated: l.truncated && l.items.len() < k,
                })
                .collect(),
        }
    }
}

/// For each user, the K highest-scoring items outside the user's training
/// positives. Ties break toward the smaller item index. Held-out items stay
/// eligible: the re-ranking stage scores candidates against validation
/// labels, so candidate lists must be able to contain them.
pub fn top_k_lists(params: &ModelParams, dataset: &Dataset, k: usize) -> Result<RecLists> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let mut excluded: Vec<std::collections::HashSet<u32>> =
        vec![std::collections::HashSet::new(); dataset.n_users];
    for &(u, v) in dataset.train.iter() {
        excluded[u as usize].insert(v);
    }

    let mut lists = Vec::with_capacity(dataset.n_users);
    for u in 0..dataset.n_users as u32 {
        let banned = &excluded[u as usize];
        let mut scored: Vec<(u32, f64)> = (0..dataset.n_items as u32)
            .filter(|v| !banned.contains(v))
            .map(|v| (v, params.score_unchecked(u, v)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let truncated = scored.len() < k;
        scored.truncate(k);
        lists.push(UserList {
            items: scored,
            truncated,
        });
    }
    Ok(RecLists { k, lists })
}

/// Write candidate lists as text: a `# reclists v1 K=<k>` header, then one
/// row per user: `user<TAB>truncated<TAB>item:score item:score ...`.
/// Scores print in shortest round-trip form.
pub fn write_reclists<W: std::io::Write>(out: &mut W, lists: &RecLists) -> Result<()> {
    writeln!(out, "# reclists v1 K={}", lists.k)?;
    for (u, list) in lists.lists.iter().enumerate() {
        let entries: Vec<String> = list
            .items
            .iter()
            .map(|&(v, s)| format!("{v}:{s}"))
            .collect();
        writeln!(
            out,
            "{u}\t{}\t{}",
            u8::from(list.truncated),
            entries.join(" ")
        )?;
    }
    Ok(())
}

pub fn read_reclists<R: std::io::Read>(reader: R) -> Result<RecLists> {
    use std::io::BufRead;
    let mut lines = std::io::BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty reclists file".into()))??;
    let k: usize = header
        .strip_prefix("# reclists v1 K=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad reclists header {header:?}")))?;
    let mut lists = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Format(format!("expected 3 columns: {line:?}")));
        }
        let user: usize = cols[0]
            .parse()
            .map_err(|_| Error::Format(format!("bad user {:?}", cols[0])))?;
        if user != lists.len() {
            return Err(Error::Format(format!(
                "reclists rows must be dense and ordered; expected user {}, got {user}",
                lists.len()
            )));
        }
        let truncated = cols[1] == "1";
        let items = cols[2]
            .split(' ')
            .filter(|e| !e.is_empty())
            .map(|entry| {
                let (item, score) = entry
                    .split_once(':')
                    .ok_or_else(|| Error::Format(format!("bad entry {entry:?}")))?;
                let item: u32 = item
                    .parse()
                    .map_err(|_| Error::Format(format!("bad item {item:?}")))?;
                let score: f64 = score
                    .parse()
                    .map_err(|_| Error::Format(format!("bad score {score:?}")))?;
                Ok((item, score))
            })
            .collect::<Result<Vec<_>>>()?;
        lists.push(UserList { items, truncated });
    }
    Ok(RecLists { k, lists })
}
