//! Contrastive objectives: unimodal NT-Xent over augmented views, symmetric
//! gesture-speech InfoNCE, and their mean.

use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Var};
use crate::error::{Error, Result};

/// Floor on the embedding norm before cosine similarity.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { temperature: 0.1 }
    }
}

impl LossConfig {
    fn check(&self) -> Result<()> {
        if self.temperature > 0.0 && self.temperature.is_finite() {
            Ok(())
        } else {
            Err(Error::Contract(format!("temperature {} must be positive", self.temperature)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Unimodal,
    Multimodal,
    Combined,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Unimodal => "unimodal",
            Objective::Multimodal => "multimodal",
            Objective::Combined => "combined",
        }
    }

    pub fn uses_views(self) -> bool {
        matches!(self, Objective::Unimodal | Objective::Combined)
    }

    pub fn uses_speech(self) -> bool {
        matches!(self, Objective::Multimodal | Objective::Combined)
    }
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "unimodal" => Ok(Objective::Unimodal),
            "multimodal" => Ok(Objective::Multimodal),
            "combined" => Ok(Objective::Combined),
            other => Err(format!("unknown mode {other:?} (unimodal, multimodal or combined)")),
        }
    }
}

/// Temperature-scaled cosine similarity matrix `ẑ_a ẑ_bᵀ / τ`.
fn similarity(g: &mut Graph, a: Var, b: Var, cfg: &LossConfig) -> Result<Var> {
    let na = g.l2_normalize(a, NORM_EPS);
    let nb = g.l2_normalize(b, NORM_EPS);
    let bt = g.transpose(nb)?;
    let s = g.matmul(na, bt)?;
    Ok(g.scale(s, 1.0 / cfg.temperature))
}

fn check_matrix(g: &Graph, what: &str, v: Var) -> Result<(usize, usize)> {
    let s = g.shape(v);
    if s.len() != 2 || s[0] == 0 {
        return Err(Error::Contract(format!("{what} must be a nonempty matrix, got {:?}", s)));
    }
    Ok((s[0], s[1]))
}

/// NT-Xent over `2N` view embeddings where rows `i` and `i + N` are the two
/// views of instance `i`. Each anchor's denominator runs over every other
/// embedding, its positive included; the loss is the mean over all `2N`
/// anchors.
pub fn unimodal_nt_xent(g: &mut Graph, views: Var, cfg: &LossConfig) -> Result<Var> {
    cfg.check()?;
    let (rows, _) = check_matrix(g, "views", views)?;
    if rows % 2 != 0 {
        return Err(Error::Contract(format!("unimodal loss needs paired views, got {rows} rows")));
    }
    let n = rows / 2;
    let s = similarity(g, views, views, cfg)?;
    let others = g.off_diagonal(s)?;
    let lse = g.log_sum_exp(others)?;
    let positives: Vec<usize> = (0..rows)
        .map(|i| {
            let p = (i + n) % rows;
            let col = if p < i { p } else { p - 1 };
            i * (rows - 1) + col
        })
        .collect();
    let pos = g.gather(others, &positives)?;
    let per_anchor = g.sub(lse, pos)?;
    Ok(g.mean(per_anchor))
}

/// The same loss from two aligned `(N, d)` view matrices.
pub fn unimodal_from_pairs(g: &mut Graph, first: Var, second: Var, cfg: &LossConfig) -> Result<Var> {
    let (a, _) = check_matrix(g, "first views", first)?;
    let (b, _) = check_matrix(g, "second views", second)?;
    if a != b {
        return Err(Error::Contract(format!("{a} first views vs {b} second views")));
    }
    let views = g.concat(&[first, second], 0)?;
    unimodal_nt_xent(g, views, cfg)
}

/// Symmetric InfoNCE between index-aligned gesture and speech embeddings.
/// Denominators run over the opposite modality only, positive included.
pub fn multimodal_info_nce(g: &mut Graph, gesture: Var, speech: Var, cfg: &LossConfig) -> Result<Var> {
    cfg.check()?;
    let (n, _) = check_matrix(g, "gesture embeddings", gesture)?;
    let (m, _) = check_matrix(g, "speech embeddings", speech)?;
    if n != m {
        return Err(Error::Contract(format!("{n} gesture vs {m} speech embeddings")));
    }
    let s = similarity(g, gesture, speech, cfg)?;
    let st = g.transpose(s)?;
    let lse_g = g.log_sum_exp(s)?;
    let lse_s = g.log_sum_exp(st)?;
    let diag: Vec<usize> = (0..n).map(|i| i * n + i).collect();
    let pos = g.gather(s, &diag)?;
    let lse = g.concat(&[lse_g, lse_s], 0)?;
    let pos = g.concat(&[pos, pos], 0)?;
    let per_anchor = g.sub(lse, pos)?;
    Ok(g.mean(per_anchor))
}

/// `½ (unimodal + multimodal)` on the graph.
pub fn combined(g: &mut Graph, unimodal: Var, multimodal: Var) -> Result<Var> {
    let s = g.add(unimodal, multimodal)?;
    Ok(g.scale(s, 0.5))
}

/// `½ (unimodal + multimodal)` on plain values.
pub fn combined_loss(unimodal: f64, multimodal: f64) -> f64 {
    0.5 * (unimodal + multimodal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;

    fn eval(f: impl FnOnce(&mut Graph) -> Result<Var>) -> f64 {
        let mut g = Graph::new();
        let v = f(&mut g).unwrap();
        g.value(v).item().unwrap()
    }

    #[test]
    fn single_instance_is_zero() {
        let cfg = LossConfig::default();
        let uni = eval(|g| {
            let v = g.constant(Tensor::new(&[2, 3], vec![1.0, 2.0, 0.5, -1.0, 0.3, 2.0]).unwrap());
            unimodal_nt_xent(g, v, &cfg)
        });
        assert_eq!(uni, 0.0);
        let mm = eval(|g| {
            let a = g.constant(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
            let b = g.constant(Tensor::new(&[1, 2], vec![-3.0, 0.5]).unwrap());
            multimodal_info_nce(g, a, b, &cfg)
        });
        assert_eq!(mm, 0.0);
    }

    #[test]
    fn odd_views_and_mismatch_rejected() {
        let cfg = LossConfig::default();
        let mut g = Graph::new();
        let v = g.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(unimodal_nt_xent(&mut g, v, &cfg), Err(Error::Contract(_))));
        let a = g.constant(Tensor::filled(&[2, 2], 1.0));
        let b = g.constant(Tensor::filled(&[3, 2], 1.0));
        assert!(matches!(multimodal_info_nce(&mut g, a, b, &cfg), Err(Error::Contract(_))));
    }

    #[test]
    fn combined_values() {
        assert_eq!(combined_loss(0.4, 0.6), 0.5);
        assert_eq!(combined_loss(0.0, 0.0), 0.0);
        assert!((combined_loss(3f64.ln(), 0.0) - 0.549_306_144_334_054_8).abs() < 1e-15);
    }
}
