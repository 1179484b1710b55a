//! Grid search over penalty strength and augmentation size.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::{run_panda, PandaConfig, PandaFit};
use crate::error::{PandaError, Result};
use crate::family::GlmFamily;
use crate::glm::neg_log_likelihood;
use crate::noise::NoiseScheme;
use crate::rng::{derive_seed, rng_from_seed};

const FOLD_STREAM: u64 = 0xF01D;
const FIT_STREAM: u64 = 0xF17;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Criterion {
    Cv { k: usize },
    /// Cross-validation with the one-standard-error rule: the most
    /// regularized candidate whose score is within one SE of the minimum.
    CvOneSe { k: usize },
    Aic,
    Bic,
}

/// How the noise variance scale is set for each candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Strength {
    /// Candidate values of `λ·n_e`; the scheme's `λ` becomes `λn_e / n_e`.
    LambdaNe(Vec<f64>),
    /// One fixed `λ` for every `n_e` (the l0 mode, where `n_e` is the knob).
    FixedLambda(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneGrid {
    pub scheme_template: NoiseScheme,
    pub strength: Strength,
    pub n_e_values: Vec<usize>,
    pub criterion: Criterion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub lambda_ne: f64,
    pub n_e: usize,
    pub scheme: NoiseScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub lambda_ne: f64,
    pub n_e: usize,
    pub score: Option<f64>,
    pub fold_scores: Vec<f64>,
    pub n_nonzero: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub best: Candidate,
    pub best_index: usize,
    pub table: Vec<ScoreRow>,
    /// The winning candidate refitted on all rows.
    pub refit: PandaFit,
}

impl TuneGrid {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PandaError::InvalidParameter(m.into()));
        match &self.strength {
            Strength::LambdaNe(v) if v.is_empty() => return bad("empty λn_e grid"),
            Strength::LambdaNe(v) if v.iter().any(|l| !(*l > 0.0 && l.is_finite())) => return bad("λn_e values must be positive"),
            Strength::FixedLambda(l) if !(*l > 0.0 && l.is_finite()) => return bad("λ must be positive"),
            _ => {}
        }
        if self.n_e_values.is_empty() || self.n_e_values.contains(&0) {
            return bad("n_e grid must be nonempty with positive entries");
        }
        if let Criterion::Cv { k } | Criterion::CvOneSe { k } = self.criterion {
            if k < 2 {
                return bad("cross-validation needs at least 2 folds");
            }
        }
        Ok(())
    }

    /// Candidates ordered by `λn_e`, then `n_e`.
    pub fn candidates(&self) -> Vec<Candidate> {
        let mut out = Vec::new();
        for &n_e in &self.n_e_values {
            match &self.strength {
                Strength::LambdaNe(v) => {
                    for &lne in v {
                        out.push(Candidate { lambda_ne: lne, n_e, scheme: self.scheme_template.with_lambda(lne / n_e as f64) });
                    }
                }
                Strength::FixedLambda(l) => {
                    out.push(Candidate { lambda_ne: l * n_e as f64, n_e, scheme: self.scheme_template.with_lambda(*l) })
                }
            }
        }
        out.sort_by(|a, b| a.lambda_ne.total_cmp(&b.lambda_ne).then(a.n_e.cmp(&b.n_e)));
        out
    }
}

/// Fold label of every row; depends only on `(seed, n, k)`.
pub fn fold_assignment(seed: u64, n: usize, k: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut rng = rng_from_seed(derive_seed(seed, &[FOLD_STREAM, n as u64, k as u64]));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut folds = vec![0; n];
    for (pos, &i) in idx.iter().enumerate() {
        folds[i] = pos % k;
    }
    folds
}

fn candidate_config(config: &PandaConfig, c: &Candidate, index: usize, fold: usize) -> PandaConfig {
    PandaConfig { n_e: c.n_e, seed: derive_seed(config.seed, &[FIT_STREAM, index as u64, fold as u64]), keep_batches: false, ..config.clone() }
}

fn information_score(family: &GlmFamily, data: &Dataset, fit: &PandaFit, criterion: Criterion) -> Result<f64> {
    let nll = neg_log_likelihood(family, data, &fit.theta_hat)?;
    let k = (fit.n_nonzero() + 1) as f64;
    Ok(match criterion {
        Criterion::Aic => 2.0 * nll + 2.0 * k,
        Criterion::Bic => 2.0 * nll + k * (data.n() as f64).ln(),
        Criterion::Cv { .. } | Criterion::CvOneSe { .. } => unreachable!("information criteria only"),
    })
}

fn score_candidate(family: &GlmFamily, data: &Dataset, grid: &TuneGrid, config: &PandaConfig, c: &Candidate, index: usize, folds: &[usize]) -> ScoreRow {
    let mut row = ScoreRow { lambda_ne: c.lambda_ne, n_e: c.n_e, score: None, fold_scores: Vec::new(), n_nonzero: None, error: None };
    let result = (|| -> Result<()> {
        match grid.criterion {
            Criterion::Cv { k } | Criterion::CvOneSe { k } => {
                for f in 0..k {
                    let train: Vec<usize> = (0..data.n()).filter(|&i| folds[i] != f).collect();
                    let test: Vec<usize> = (0..data.n()).filter(|&i| folds[i] == f).collect();
                    let fit = run_panda(family, &data.select_rows(&train), &c.scheme, &candidate_config(config, c, index, f))?;
                    row.fold_scores.push(neg_log_likelihood(family, &data.select_rows(&test), &fit.theta_hat)?);
                }
                row.score = Some(row.fold_scores.iter().sum());
            }
            crit => {
                let fit = run_panda(family, data, &c.scheme, &candidate_config(config, c, index, 0))?;
                row.n_nonzero = Some(fit.n_nonzero());
                row.score = Some(information_score(family, data, &fit, crit)?);
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        row.score = None;
        row.error = Some(e.to_string());
    }
    if row.score.is_some_and(|s| !s.is_finite()) {
        row.score = None;
        row.error = Some("non-finite score".into());
    }
    row
}

/// Highest-index scored row within one standard error of the minimum. The
/// score is a sum over folds, so its SE is `√k` times the fold-score SD.
fn one_se_choice(table: &[ScoreRow], min_index: usize) -> usize {
    let f = &table[min_index].fold_scores;
    let k = f.len() as f64;
    let mean = f.iter().sum::<f64>() / k;
    let sd = (f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    let limit = table[min_index].score.unwrap_or(f64::INFINITY) + k.sqrt() * sd;
    (0..table.len()).rev().find(|&i| table[i].score.is_some_and(|s| s <= limit)).unwrap_or(min_index)
}

/// Scores every candidate and refits the winner on all rows. Ties go to the
/// smaller `λn_e`, then the smaller `n_e`.
pub fn tune(family: &GlmFamily, data: &Dataset, grid: &TuneGrid, config: &PandaConfig) -> Result<TuneResult> {
    grid.validate()?;
    let cands = grid.candidates();
    let folds = match grid.criterion {
        Criterion::Cv { k } | Criterion::CvOneSe { k } if k > data.n() => {
            return Err(PandaError::InvalidParameter(format!("{k} folds for {} rows", data.n())));
        }
        Criterion::Cv { k } | Criterion::CvOneSe { k } => fold_assignment(config.seed, data.n(), k),
        _ => Vec::new(),
    };
    let table: Vec<ScoreRow> =
        cands.par_iter().enumerate().map(|(i, c)| score_candidate(family, data, grid, config, c, i, &folds)).collect();

    let best_index = table
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.score.map(|s| (i, s)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .ok_or_else(|| {
            PandaError::Tuning(
                table.iter().map(|r| format!("λn_e={} n_e={}: {}", r.lambda_ne, r.n_e, r.error.as_deref().unwrap_or("no score"))).collect(),
            )
        })?;
    let best_index = match grid.criterion {
        Criterion::CvOneSe { .. } => one_se_choice(&table, best_index),
        _ => best_index,
    };
    let best = cands[best_index].clone();
    let refit_cfg = PandaConfig { n_e: best.n_e, ..config.clone() };
    let refit = run_panda(family, data, &best.scheme, &refit_cfg)?;
    Ok(TuneResult { best, best_index, table, refit })
}
