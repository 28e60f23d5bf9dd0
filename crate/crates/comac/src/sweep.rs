//! Grid sweeps over loss weights and the token keep ratio.

use std::io::Write;

use comac_core::corpus::DialogueRound;
use comac_core::embedding::EmbeddingSource;
use comac_core::objective::TrainConfig;
use comac_core::saliency::{build_idf, IdfTable};
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{evaluate, train_model};

/// Loss-weight cells `(alpha, beta, gamma)` crossed with keep ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub cells: Vec<[f64; 3]>,
    pub p_sr: Vec<f64>,
    /// Require `alpha + beta + gamma = 10` in every cell.
    pub sum_to_ten: bool,
}

impl SweepSpec {
    /// Cartesian product of the three weight axes.
    pub fn from_axes(alphas: &[f64], betas: &[f64], gammas: &[f64], p_sr: Vec<f64>, sum_to_ten: bool) -> Self {
        let mut cells = Vec::new();
        for &a in alphas {
            for &b in betas {
                for &g in gammas {
                    cells.push([a, b, g]);
                }
            }
        }
        Self {
            cells,
            p_sr,
            sum_to_ten,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() || self.p_sr.is_empty() {
            return Err(Error::Config("empty sweep grid".into()));
        }
        if self.sum_to_ten {
            for &[a, b, g] in &self.cells {
                let sum = a + b + g;
                if (sum - 10.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "cell ({a}, {b}, {g}) sums to {sum}, constraint requires alpha + beta + gamma = 10"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Grid points in row order: cells outer, keep ratios inner.
    pub fn points(&self) -> Vec<([f64; 3], f64)> {
        self.cells
            .iter()
            .flat_map(|&c| self.p_sr.iter().map(move |&p| (c, p)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub p_sr: f64,
    pub pg_accuracy: f64,
    pub pg_f1: f64,
    pub pg_precision: f64,
    pub pg_recall: f64,
    pub kg_accuracy: f64,
}

/// Trains and evaluates one model per grid point. Rows come back in
/// [`SweepSpec::points`] order whatever the thread count.
pub fn run_sweep<S: EmbeddingSource + Sync + ?Sized>(
    spec: &SweepSpec,
    base: &TrainConfig,
    train: &[DialogueRound],
    eval: &[DialogueRound],
    embeddings: &S,
    idf: Option<IdfTable>,
    pool: &ThreadPool,
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let points = spec.points();
    for &([alpha, beta, gamma], p_sr) in &points {
        TrainConfig {
            alpha,
            beta,
            gamma,
            p_sr,
            ..base.clone()
        }
        .validate()?;
    }
    let idf = match idf {
        Some(t) => t,
        None => build_idf(train)?,
    };
    pool.install(|| {
        points
            .par_iter()
            .map(|&([alpha, beta, gamma], p_sr)| {
                let cfg = TrainConfig {
                    alpha,
                    beta,
                    gamma,
                    p_sr,
                    ..base.clone()
                };
                let ck = train_model(train, embeddings, Some(idf.clone()), &cfg, |_| {})?;
                let report = evaluate(&ck, eval, embeddings, pool)?;
                Ok(SweepRow {
                    alpha,
                    beta,
                    gamma,
                    p_sr,
                    pg_accuracy: report.pg.accuracy,
                    pg_f1: report.pg.f1,
                    pg_precision: report.pg.precision,
                    pg_recall: report.pg.recall,
                    kg_accuracy: report.kg_accuracy,
                })
            })
            .collect()
    })
}

pub fn write_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}
