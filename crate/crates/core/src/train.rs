//! Head-only training: the upstream representation is frozen and only the
//! prediction head's weight and bias are updated.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tagging::{
    argmax_grid, decode_grid, head_loss_and_gradients, predict_grid, MatchCounts, Metrics, PredictionHead,
    Quintuple, TagGrid,
};

/// One record's frozen features and its gold grid.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub s_rep: Array2<f64>,
    pub gold: TagGrid,
    pub gold_quintuples: Vec<Quintuple>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub learning_rate: f64,
    /// Multiplies the learning rate whenever the dev loss fails to improve.
    pub lr_decay: f64,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub dev_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest dev loss.
    pub head: PredictionHead,
    pub best_epoch: usize,
    pub curve: Vec<EpochStats>,
    pub stopped_early: bool,
}

/// Adam moment estimates for the head parameters.
#[derive(Clone, Debug)]
struct Adam {
    m_w: Array2<f64>,
    v_w: Array2<f64>,
    m_b: Array1<f64>,
    v_b: Array1<f64>,
    step: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(head: &PredictionHead) -> Self {
        Self {
            m_w: Array2::zeros(head.weight.dim()),
            v_w: Array2::zeros(head.weight.dim()),
            m_b: Array1::zeros(head.bias.len()),
            v_b: Array1::zeros(head.bias.len()),
            step: 0,
        }
    }

    fn update(&mut self, head: &mut PredictionHead, grad_w: &Array2<f64>, grad_b: &Array1<f64>, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        ndarray::Zip::from(&mut head.weight)
            .and(&mut self.m_w)
            .and(&mut self.v_w)
            .and(grad_w)
            .for_each(|p, m, v, &g| adam_step(p, m, v, g, lr, c1, c2));
        ndarray::Zip::from(&mut head.bias)
            .and(&mut self.m_b)
            .and(&mut self.v_b)
            .and(grad_b)
            .for_each(|p, m, v, &g| adam_step(p, m, v, g, lr, c1, c2));
    }
}

fn adam_step(p: &mut f64, m: &mut f64, v: &mut f64, g: f64, lr: f64, c1: f64, c2: f64) {
    *m = BETA1 * *m + (1.0 - BETA1) * g;
    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
}

/// Summed main loss over `examples`.
pub fn corpus_loss(head: &PredictionHead, examples: &[Example]) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        total += head_loss_and_gradients(ex.s_rep.view(), &ex.gold, head)
            .map_err(|e| e.in_record(&ex.id))?
            .0;
    }
    Ok(total)
}

/// Fraction of grid cells whose argmax tag equals gold, and the quintuple
/// metrics of the decoded predictions.
pub fn evaluate_head(head: &PredictionHead, examples: &[Example]) -> Result<(f64, Metrics)> {
    let mut right = 0usize;
    let mut cells = 0usize;
    let mut counts = MatchCounts::default();
    for ex in examples {
        let grid = predict_cells(head, ex.s_rep.view(), &ex.gold)?;
        right += grid.cells().iter().zip(ex.gold.cells()).filter(|(a, b)| a == b).count();
        cells += ex.gold.cells().len();
        counts.add(MatchCounts::of(&decode_grid(&grid), &ex.gold_quintuples));
    }
    let accuracy = if cells == 0 { 0.0 } else { right as f64 / cells as f64 };
    Ok((accuracy, counts.metrics()))
}

fn predict_cells(head: &PredictionHead, s_rep: ArrayView2<f64>, gold: &TagGrid) -> Result<TagGrid> {
    argmax_grid(&predict_grid(s_rep, head)?, gold.space())
}

/// Adam steps on the summed cell cross-entropy of one record at a time, in
/// input order. After each epoch the dev loss is checked: a new minimum
/// records the head; otherwise the learning rate is multiplied by `lr_decay`,
/// and after `patience` such epochs training stops.
pub fn train_head(
    mut head: PredictionHead,
    train: &[Example],
    dev: &[Example],
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    if !(options.learning_rate >= 0.0) {
        return Err(Error::config("learning_rate", "must be non-negative"));
    }
    if options.patience == 0 {
        return Err(Error::config("patience", "must be positive"));
    }
    let mut adam = Adam::new(&head);
    let mut lr = options.learning_rate;
    let mut best = (f64::INFINITY, head.clone(), 0);
    let mut curve = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=options.max_epochs {
        for ex in train {
            let (loss, grads) =
                head_loss_and_gradients(ex.s_rep.view(), &ex.gold, &head).map_err(|e| e.in_record(&ex.id))?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "training diverged at epoch {epoch}: loss {loss} on record {}",
                    ex.id
                )));
            }
            adam.update(&mut head, &grads.weight, &grads.bias, lr);
        }
        let train_loss = corpus_loss(&head, train)?;
        let dev_loss = corpus_loss(&head, dev)?;
        if !train_loss.is_finite() || !dev_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "training diverged at epoch {epoch}: train loss {train_loss}, dev loss {dev_loss}"
            )));
        }
        curve.push(EpochStats {
            epoch,
            learning_rate: lr,
            train_loss,
            dev_loss,
        });
        if dev_loss < best.0 {
            best = (dev_loss, head.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            lr *= options.lr_decay;
            if since_best >= options.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (_, best_head, best_epoch) = best;
    Ok(TrainOutcome {
        head: if best_epoch == 0 { head } else { best_head },
        best_epoch,
        curve,
        stopped_early,
    })
}
