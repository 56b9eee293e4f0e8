//! Hyperparameter sensitivity sweeps: test accuracy over a grid of values
//! for one loss weight or the per-class prototype count.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::config::PgibConfig;
use crate::error::{PgibError, Result};
use crate::eval::line_plot;
use crate::graph::{split_dataset, Graph, GraphDataset};
use crate::trainer::{accuracy, train};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SweepParam {
    Alpha1,
    Alpha2,
    Alpha3,
    PerClass,
}

impl FromStr for SweepParam {
    type Err = PgibError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha1" | "α1" => Ok(Self::Alpha1),
            "alpha2" | "α2" => Ok(Self::Alpha2),
            "alpha3" | "α3" => Ok(Self::Alpha3),
            "J" | "j" | "per_class" => Ok(Self::PerClass),
            other => Err(PgibError::Argument(format!(
                "unknown sweep parameter {other:?} (expected alpha1, alpha2, alpha3 or J)"
            ))),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Alpha1 => "alpha1",
            Self::Alpha2 => "alpha2",
            Self::Alpha3 => "alpha3",
            Self::PerClass => "J",
        })
    }
}

impl SweepParam {
    /// Copy of `base` with this parameter set to `value`. `J` must be a
    /// positive integer.
    pub fn apply(self, base: &PgibConfig, value: f64) -> Result<PgibConfig> {
        let mut cfg = base.clone();
        match self {
            Self::Alpha1 => cfg.model.loss.alpha1 = value,
            Self::Alpha2 => cfg.model.loss.alpha2 = value,
            Self::Alpha3 => cfg.model.loss.alpha3 = value,
            Self::PerClass => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(PgibError::Argument(format!("J must be a positive integer, got {value}")));
                }
                cfg.model.per_class = value as usize;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub dataset: String,
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// `(value, mean, population std)` per value, in sweep order.
    pub fn summary(&self) -> Vec<(f64, f64, f64)> {
        let mut values: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !values.contains(&r.value) {
                values.push(r.value);
            }
        }
        values
            .into_iter()
            .map(|v| {
                let accs: Vec<f64> = self.rows.iter().filter(|r| r.value == v).map(|r| r.test_accuracy).collect();
                let n = accs.len() as f64;
                let mean = accs.iter().sum::<f64>() / n;
                let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
                (v, mean, var.sqrt())
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("param,value,seed,test_accuracy\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{:.6}", self.param, r.value, r.seed, r.test_accuracy).expect("string write");
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("param,value,mean,std\n");
        for (v, m, sd) in self.summary() {
            writeln!(s, "{},{v},{m:.6},{sd:.6}", self.param).expect("string write");
        }
        s
    }

    /// Writes `sweep_<param>.csv`, `sweep_<param>_summary.csv` and
    /// `sweep_<param>.svg` (mean accuracy against value).
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let stem = format!("sweep_{}", self.param);
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        std::fs::write(dir.join(format!("{stem}_summary.csv")), self.summary_csv())?;
        let pts: Vec<(f64, f64)> = self.summary().iter().map(|s| (s.0, s.1)).collect();
        line_plot(
            &dir.join(format!("{stem}.svg")),
            &format!("{} on {}", self.param, self.dataset),
            &self.param.to_string(),
            "test accuracy",
            &[("mean", &pts)],
        )
    }
}

/// Trains one model per `(value, seed)` with the split of that seed and
/// records its test accuracy. Values keep their given order.
pub fn run_sweep(ds: &GraphDataset, base: &PgibConfig, param: SweepParam, values: &[f64], seeds: &[u64]) -> Result<SweepReport> {
    run_sweep_with(ds, base, param, values, seeds, |_| {})
}

/// [`run_sweep`] with a callback after every finished run.
pub fn run_sweep_with<F>(
    ds: &GraphDataset,
    base: &PgibConfig,
    param: SweepParam,
    values: &[f64],
    seeds: &[u64],
    mut on_row: F,
) -> Result<SweepReport>
where
    F: FnMut(&SweepRow),
{
    if values.is_empty() || seeds.is_empty() {
        return Err(PgibError::Argument("sweep needs at least one value and one seed".into()));
    }
    let mut rows = Vec::new();
    for &value in values {
        for &seed in seeds {
            let mut cfg = param.apply(base, value)?;
            cfg.seed = seed;
            let split = split_dataset(ds, seed)?;
            let out = train(ds, &split, &cfg)?;
            let test: Vec<&Graph> = split.test.iter().map(|&i| &ds.graphs[i]).collect();
            let row = SweepRow {
                value,
                seed,
                test_accuracy: accuracy(&out.model, &test)?,
            };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(SweepReport {
        dataset: ds.name.clone(),
        param,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ba2motifs::generate_ba2motifs;
    use crate::encoder::GinConfig;

    #[test]
    fn parses_and_applies() {
        let base = PgibConfig::default();
        assert_eq!("α1".parse::<SweepParam>().unwrap(), SweepParam::Alpha1);
        assert!("beta".parse::<SweepParam>().is_err());
        assert_eq!(SweepParam::Alpha3.apply(&base, 0.5).unwrap().model.loss.alpha3, 0.5);
        assert_eq!(SweepParam::PerClass.apply(&base, 3.0).unwrap().model.per_class, 3);
        assert!(SweepParam::PerClass.apply(&base, 2.5).is_err());
        assert!(SweepParam::Alpha1.apply(&base, -1.0).is_err());
    }

    #[test]
    fn summary_statistics() {
        let rep = SweepReport {
            dataset: "d".into(),
            param: SweepParam::Alpha2,
            rows: vec![
                SweepRow { value: 0.1, seed: 0, test_accuracy: 0.5 },
                SweepRow { value: 1.0, seed: 0, test_accuracy: 0.25 },
                SweepRow { value: 0.1, seed: 1, test_accuracy: 1.0 },
                SweepRow { value: 1.0, seed: 1, test_accuracy: 0.25 },
            ],
        };
        assert_eq!(rep.summary(), vec![(0.1, 0.75, 0.25), (1.0, 0.25, 0.0)]);
        assert_eq!(
            rep.summary_csv(),
            "param,value,mean,std\nalpha2,0.1,0.750000,0.250000\nalpha2,1,0.250000,0.000000\n"
        );
        let dir = tempfile::tempdir().unwrap();
        rep.write(dir.path()).unwrap();
        for f in ["sweep_alpha2.csv", "sweep_alpha2_summary.csv", "sweep_alpha2.svg"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }

    #[test]
    fn tiny_sweep_runs() {
        let ds = generate_ba2motifs(20, 3).unwrap();
        let mut base = PgibConfig {
            epochs: 1,
            batch_size: 16,
            merge_enabled: false,
            ..PgibConfig::default()
        };
        base.model.gin = GinConfig {
            layers: 1,
            hidden_dim: 4,
            ..GinConfig::default()
        };
        let rep = run_sweep(&ds, &base, SweepParam::PerClass, &[1.0, 2.0], &[0]).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert!(rep.rows.iter().all(|r| (0.0..=1.0).contains(&r.test_accuracy)));
        assert!(run_sweep(&ds, &base, SweepParam::Alpha1, &[], &[0]).is_err());
    }
}
