//! Epoch and fit loops.

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::dataset::{recast_to_triples, InteractionDataset, Triple, INTERACTS_WITH};
use crate::error::{Error, Result};
use crate::model::{EmbeddingModel, Gradients};
use crate::rng::{stream_rng, Stream};
use crate::train::config::{LossKind, Strategy, TrainingConfig};
use crate::train::loss::{self, PointwiseLoss, SideLabels};
use crate::train::optimizer::OptimizerState;
use crate::train::regularizer::{regularize, TouchedRows};
use crate::train::sampler::{sample_corruptions, sample_negative_items, EntityLayout};

/// All train positives with one anchor entity, for KvsAll.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KvsGroup {
    pub anchor: usize,
    pub relation: usize,
    /// Sorted objects `o` with `(anchor, relation, o)` in the train graph.
    pub objects: Vec<usize>,
    /// Sorted subjects `s` with `(s, relation, anchor)` in the train graph.
    pub subjects: Vec<usize>,
}

/// Train split in the shapes the strategies consume.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub layout: EntityLayout,
    pub num_relations: usize,
    pub triples: Vec<Triple>,
    /// Sorted item indices of each user's train positives.
    pub user_items: Vec<Vec<usize>>,
    pub groups: Vec<KvsGroup>,
}

impl TrainingData {
    pub fn new(dataset: &InteractionDataset, untyped: bool) -> Result<Self> {
        let graph = recast_to_triples(dataset);
        if graph.triples.is_empty() {
            return Err(Error::InvalidArgument("no training interactions".into()));
        }
        let layout = EntityLayout {
            num_users: dataset.num_users,
            num_items: dataset.num_items,
            typed: !untyped,
        };
        let user_items = dataset
            .train_pos
            .iter()
            .map(|items| {
                let mut v = items.clone();
                v.sort_unstable();
                v
            })
            .collect();
        let groups = kvs_groups(&graph.triples, layout.num_entities());
        Ok(TrainingData {
            layout,
            num_relations: graph.num_relations,
            triples: graph.triples,
            user_items,
            groups,
        })
    }

    fn item_entity(&self, item: usize) -> usize {
        self.layout.num_users + item
    }

    fn user_positive_entities(&self, user: usize) -> Vec<usize> {
        self.user_items[user]
            .iter()
            .map(|&i| self.item_entity(i))
            .collect()
    }

    fn object_side(&self, group: &KvsGroup) -> Option<Range> {
        let cands = self.layout.object_candidates();
        (!self.layout.typed || self.layout.users().contains(&group.anchor)).then_some(cands)
    }

    fn subject_side(&self, group: &KvsGroup) -> Option<Range> {
        let cands = self.layout.subject_candidates();
        (!self.layout.typed || self.layout.items().contains(&group.anchor)).then_some(cands)
    }
}

type Range = std::ops::Range<usize>;

fn kvs_groups(triples: &[Triple], num_entities: usize) -> Vec<KvsGroup> {
    use std::collections::BTreeMap;
    let mut by_anchor: BTreeMap<(usize, usize), (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for t in triples {
        by_anchor
            .entry((t.subject, t.relation))
            .or_default()
            .0
            .push(t.object);
        by_anchor
            .entry((t.object, t.relation))
            .or_default()
            .1
            .push(t.subject);
    }
    debug_assert!(by_anchor.keys().all(|&(e, _)| e < num_entities));
    by_anchor
        .into_iter()
        .map(|((anchor, relation), (mut objects, mut subjects))| {
            objects.sort_unstable();
            objects.dedup();
            subjects.sort_unstable();
            subjects.dedup();
            KvsGroup {
                anchor,
                relation,
                objects,
                subjects,
            }
        })
        .collect()
}

/// One training unit. Entity ids throughout.
#[derive(Clone, Debug, PartialEq)]
pub enum Example {
    Corrupted {
        positive: Triple,
        corruptions: Vec<Triple>,
    },
    /// Index into [`TrainingData::groups`].
    Group(usize),
    Triple(Triple),
    Pairwise {
        user: usize,
        item: usize,
        negatives: Vec<usize>,
    },
    Pointwise {
        user: usize,
        item: usize,
        label: f64,
    },
    UserSoftmax {
        user: usize,
    },
    UserContrastive {
        user: usize,
        negatives: Vec<usize>,
    },
}

/// Builds the shuffled examples of one epoch, drawing negatives from the
/// epoch's stream.
pub fn epoch_examples(
    data: &TrainingData,
    cfg: &TrainingConfig,
    epoch: usize,
) -> Result<Vec<Example>> {
    let mut rng = stream_rng(cfg.seed, Stream::Train, epoch as u64);
    let n_items = data.layout.num_items;
    let mut examples = Vec::new();
    match cfg.strategy {
        Strategy::NegSampling => {
            for &t in &data.triples {
                let corruptions = sample_corruptions(t, &data.layout, cfg.negatives, &mut rng)?;
                examples.push(Example::Corrupted {
                    positive: t,
                    corruptions,
                });
            }
        }
        Strategy::KvsAll => examples.extend((0..data.groups.len()).map(Example::Group)),
        Strategy::OneVsAll => examples.extend(data.triples.iter().copied().map(Example::Triple)),
        Strategy::RecPairwise => {
            for (u, items) in data.user_items.iter().enumerate() {
                for &i in items {
                    let negatives = sample_negative_items(items, n_items, cfg.negatives, &mut rng)?
                        .into_iter()
                        .map(|j| data.item_entity(j))
                        .collect();
                    examples.push(Example::Pairwise {
                        user: u,
                        item: data.item_entity(i),
                        negatives,
                    });
                }
            }
        }
        Strategy::RecPointwise => {
            for (u, items) in data.user_items.iter().enumerate() {
                for &i in items {
                    examples.push(Example::Pointwise {
                        user: u,
                        item: data.item_entity(i),
                        label: 1.0,
                    });
                    for j in sample_negative_items(items, n_items, cfg.negatives, &mut rng)? {
                        examples.push(Example::Pointwise {
                            user: u,
                            item: data.item_entity(j),
                            label: 0.0,
                        });
                    }
                }
            }
        }
        Strategy::RecSoftmax => {
            for (u, items) in data.user_items.iter().enumerate() {
                if !items.is_empty() {
                    examples.push(Example::UserSoftmax { user: u });
                }
            }
        }
        Strategy::RecContrastive => {
            for (u, items) in data.user_items.iter().enumerate() {
                if items.is_empty() {
                    continue;
                }
                let negatives = sample_negative_items(items, n_items, cfg.negatives, &mut rng)?
                    .into_iter()
                    .map(|j| data.item_entity(j))
                    .collect();
                examples.push(Example::UserContrastive { user: u, negatives });
            }
        }
    }
    examples.shuffle(&mut rng);
    Ok(examples)
}

/// Summed loss plus regularization over `examples`, with its gradient.
pub fn objective(
    model: &EmbeddingModel,
    examples: &[Example],
    cfg: &TrainingConfig,
    data: &TrainingData,
) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::new();
    let mut touched = TouchedRows::new();
    let mut total = 0.0;
    let p = INTERACTS_WITH;
    for ex in examples {
        total += match ex {
            Example::Corrupted {
                positive,
                corruptions,
            } => {
                for t in std::iter::once(positive).chain(corruptions) {
                    touched.add_triple(model, t.subject, t.relation, t.object);
                }
                match cfg.loss {
                    LossKind::MarginHinge => {
                        loss::margin_ns(model, *positive, corruptions, cfg.margin, &mut grads)
                    }
                    _ => loss::negative_sampling_bce(model, *positive, corruptions, &mut grads),
                }
            }
            Example::Group(g) => {
                let group = &data.groups[*g];
                let objects = data.object_side(group).map(|candidates| SideLabels {
                    candidates,
                    positives: &group.objects,
                });
                let subjects = data.subject_side(group).map(|candidates| SideLabels {
                    candidates,
                    positives: &group.subjects,
                });
                if objects.is_some() {
                    for &o in &group.objects {
                        touched.add_triple(model, group.anchor, group.relation, o);
                    }
                }
                if subjects.is_some() {
                    for &s in &group.subjects {
                        touched.add_triple(model, s, group.relation, group.anchor);
                    }
                }
                loss::kvsall_bce(
                    model,
                    group.anchor,
                    group.relation,
                    objects.as_ref(),
                    subjects.as_ref(),
                    &mut grads,
                )
            }
            Example::Triple(t) => {
                touched.add_triple(model, t.subject, t.relation, t.object);
                loss::one_vs_all(
                    model,
                    *t,
                    data.layout.subject_candidates(),
                    data.layout.object_candidates(),
                    &mut grads,
                )
            }
            Example::Pairwise {
                user,
                item,
                negatives,
            } => {
                touched.add_triple(model, *user, p, *item);
                for &j in negatives {
                    touched.add_triple(model, *user, p, j);
                }
                if cfg.loss == LossKind::Ph {
                    let negs: Vec<(usize, usize)> = negatives.iter().map(|&j| (*user, j)).collect();
                    loss::pairwise_hinge(
                        model,
                        &[(*user, *item)],
                        &negs,
                        cfg.margin,
                        cfg.ph_weight,
                        &mut grads,
                    )
                } else {
                    let triples: Vec<_> = negatives.iter().map(|&j| (*user, *item, j)).collect();
                    loss::bpr(model, &triples, &mut grads)
                }
            }
            Example::Pointwise { user, item, label } => {
                touched.add_triple(model, *user, p, *item);
                let kind = if cfg.loss == LossKind::Mse {
                    PointwiseLoss::Mse
                } else {
                    PointwiseLoss::Bce
                };
                loss::pointwise(model, &[(*user, *item, *label)], kind, &mut grads)
            }
            Example::UserSoftmax { user } => {
                let positives = data.user_positive_entities(*user);
                for &i in &positives {
                    touched.add_triple(model, *user, p, i);
                }
                loss::sce(model, *user, data.layout.items(), &positives, &mut grads)
            }
            Example::UserContrastive { user, negatives } => {
                let positives = data.user_positive_entities(*user);
                for &i in positives.iter().chain(negatives) {
                    touched.add_triple(model, *user, p, i);
                }
                loss::cosine_contrastive(
                    model,
                    *user,
                    &positives,
                    negatives,
                    cfg.cc_margin,
                    cfg.cc_weight,
                    &mut grads,
                )?
            }
        };
    }
    total += regularize(
        model,
        &touched,
        cfg.regularizer,
        cfg.reg_weight,
        cfg.lp_p,
        &mut grads,
    );
    Ok((total, grads))
}

/// One pass over the shuffled examples; returns the summed objective of the
/// batches, each evaluated before its own update.
pub fn train_epoch(
    model: &mut EmbeddingModel,
    data: &TrainingData,
    cfg: &TrainingConfig,
    opt: &mut OptimizerState,
    epoch: usize,
) -> Result<f64> {
    let examples = epoch_examples(data, cfg, epoch)?;
    let mut total = 0.0;
    for batch in examples.chunks(cfg.batch_size) {
        let (loss, grads) = objective(model, batch, cfg, data)?;
        opt.step(model, &grads, cfg.learning_rate)?;
        total += loss;
    }
    Ok(total)
}

/// Validation metric used for model selection (higher is better).
pub trait Validator {
    /// Whether any user has validation positives.
    fn has_targets(&self) -> bool;
    fn validate(&self, model: &EmbeddingModel) -> Result<f64>;
}

/// Validator for runs without a validation split.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoValidation;

impl Validator for NoValidation {
    fn has_targets(&self) -> bool {
        false
    }

    fn validate(&self, _model: &EmbeddingModel) -> Result<f64> {
        Err(Error::NoValidationTargets)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_recall: Option<f64>,
    pub elapsed_seconds: f64,
}

impl EpochRecord {
    pub const TSV_HEADER: &'static str = "epoch\ttrain_loss\tvalid_recall@20\telapsed_seconds";

    pub fn tsv_row(&self) -> String {
        let recall = self
            .valid_recall
            .map_or_else(|| "NA".to_string(), |r| format!("{r:.6}"));
        format!(
            "{}\t{:.6}\t{}\t{:.3}",
            self.epoch, self.train_loss, recall, self.elapsed_seconds
        )
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Best-validation snapshot, or the final parameters without validation.
    pub model: EmbeddingModel,
    pub trace: Vec<EpochRecord>,
    /// 1-based epoch of the snapshot; 0 if no epoch ran.
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
}

impl FitOutcome {
    pub fn trace_tsv(&self) -> String {
        let mut out = String::from(EpochRecord::TSV_HEADER);
        out.push('\n');
        for r in &self.trace {
            out.push_str(&r.tsv_row());
            out.push('\n');
        }
        out
    }
}

/// Trains for up to `cfg.epochs` epochs with validation every `eval_every`
/// epochs (and after the last), keeping the best snapshot and stopping once
/// `patience` consecutive evaluations fail to improve on it.
pub fn fit(
    mut model: EmbeddingModel,
    dataset: &InteractionDataset,
    cfg: &TrainingConfig,
    validator: &dyn Validator,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let evaluating = validator.has_targets();
    if cfg.patience.is_some() && !evaluating {
        return Err(Error::NoValidationTargets);
    }
    let data = TrainingData::new(dataset, cfg.untyped)?;
    let mut opt = OptimizerState::new(cfg.optimizer, &model);
    let start = Instant::now();

    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(EmbeddingModel, usize, f64)> = None;
    let mut since_best = 0usize;
    for e in 0..cfg.epochs {
        let epoch = e + 1;
        let train_loss = train_epoch(&mut model, &data, cfg, &mut opt, e)?;
        let due = epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
        let valid_recall = if evaluating && due {
            Some(validator.validate(&model)?)
        } else {
            None
        };
        trace.push(EpochRecord {
            epoch,
            train_loss,
            valid_recall,
            elapsed_seconds: start.elapsed().as_secs_f64(),
        });
        if let Some(metric) = valid_recall {
            match &best {
                Some((_, _, b)) if metric <= *b => since_best += 1,
                _ => {
                    best = Some((model.clone(), epoch, metric));
                    since_best = 0;
                }
            }
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }

    let last_epoch = trace.last().map_or(0, |r| r.epoch);
    Ok(match best {
        Some((model, best_epoch, metric)) => FitOutcome {
            model,
            trace,
            best_epoch,
            best_metric: Some(metric),
        },
        None => FitOutcome {
            model,
            trace,
            best_epoch: last_epoch,
            best_metric: None,
        },
    })
}
