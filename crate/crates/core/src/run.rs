//! Run directories: everything a training run writes, and loading it back.
//!
//! ```text
//! config.txt           sorted `key = value` lines, including `dataset`
//! metrics.csv          epoch,split,accuracy,l_cls,l_mi1,l_mi2,l_con
//! events.log           one line per projection or merge
//! checkpoint.bin       best-validation model
//! checkpoint.manifest
//! projections.json     projection records of the checkpoint's prototypes
//! split.json           graph indices of each split
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};

use crate::bottleneck::NoiseStats;
use crate::checkpoint::{self, NamedArrays, StoredArray};
use crate::config::PgibConfig;
use crate::error::{PgibError, Result};
use crate::graph::SplitSpec;
use crate::model::Model;
use crate::params::ParameterSet;
use crate::prototypes::{PrototypeSet, ProjectionResult};
use crate::trainer::{EpochMetrics, TrainOutcome};

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVENTS_FILE: &str = "events.log";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MANIFEST_FILE: &str = "checkpoint.manifest";
pub const PROJECTIONS_FILE: &str = "projections.json";
pub const SPLIT_FILE: &str = "split.json";

const DATASET_KEY: &str = "dataset";
const PARAM_PREFIX: &str = "param.";

pub fn config_text(dataset: &str, cfg: &PgibConfig) -> String {
    let mut map: BTreeMap<&str, String> = cfg.to_map();
    map.insert(DATASET_KEY, dataset.to_string());
    let mut s = String::new();
    for (k, v) in map {
        writeln!(s, "{k} = {v}").expect("string write");
    }
    s
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,split,accuracy,l_cls,l_mi1,l_mi2,l_con\n");
    for m in metrics {
        let l = &m.losses;
        writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            m.epoch, m.split, m.accuracy, l.cls, l.mi1, l.mi2, l.con
        )
        .expect("string write");
    }
    s
}

fn row(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(ndarray::Axis(0))
}

pub fn model_to_arrays(model: &Model) -> NamedArrays {
    let mut a = NamedArrays::new();
    for (name, value) in model.params.iter() {
        a.insert(format!("{PARAM_PREFIX}{name}"), StoredArray::from_matrix(value));
    }
    let p = &model.protos;
    a.insert("proto.vectors".into(), StoredArray::from_matrix(&p.vectors));
    a.insert("proto.omega".into(), StoredArray::from_matrix(&p.omega));
    a.insert(
        "proto.class_of".into(),
        StoredArray::from_u64(p.class_of.iter().map(|&c| c as u64).collect()),
    );
    a.insert(
        "proto.active".into(),
        StoredArray::from_u64(p.active.iter().map(|&b| u64::from(b)).collect()),
    );
    a.insert(
        "meta.trained_epochs".into(),
        StoredArray::from_u64(vec![model.trained_epochs as u64]),
    );
    if let Some(stats) = &model.noise_stats {
        a.insert("noise.mean".into(), StoredArray::from_matrix(&row(&stats.mean)));
        a.insert("noise.std".into(), StoredArray::from_matrix(&row(&stats.std)));
    }
    a
}

fn entry<'a>(a: &'a NamedArrays, name: &str) -> Result<&'a StoredArray> {
    a.get(name)
        .ok_or_else(|| PgibError::Checkpoint(format!("missing entry {name:?}")))
}

fn flat(a: &NamedArrays, name: &str) -> Result<Array1<f64>> {
    let m = entry(a, name)?.to_matrix()?;
    if m.nrows() != 1 {
        return Err(PgibError::Checkpoint(format!("{name} must have one row")));
    }
    Ok(m.row(0).to_owned())
}

pub fn model_from_arrays(a: &NamedArrays, cfg: &PgibConfig) -> Result<Model> {
    let mut params = ParameterSet::new();
    for (name, value) in a {
        if let Some(short) = name.strip_prefix(PARAM_PREFIX) {
            params.insert(short, value.to_matrix()?)?;
        }
    }
    let vectors = entry(a, "proto.vectors")?.to_matrix()?;
    let omega = entry(a, "proto.omega")?.to_matrix()?;
    let class_of: Vec<usize> = entry(a, "proto.class_of")?.as_u64()?.iter().map(|&c| c as usize).collect();
    let active: Vec<bool> = entry(a, "proto.active")?.as_u64()?.iter().map(|&b| b != 0).collect();
    let protos = PrototypeSet {
        vectors,
        omega,
        class_of,
        active,
        per_class: cfg.model.per_class,
    };
    protos.validate()?;
    let trained = entry(a, "meta.trained_epochs")?.as_u64()?;
    let trained_epochs = *trained
        .first()
        .ok_or_else(|| PgibError::Checkpoint("empty meta.trained_epochs".into()))? as usize;
    let noise_stats = match (a.contains_key("noise.mean"), a.contains_key("noise.std")) {
        (true, true) => Some(NoiseStats {
            mean: flat(a, "noise.mean")?,
            std: flat(a, "noise.std")?,
        }),
        (false, false) => None,
        _ => return Err(PgibError::Checkpoint("noise statistics are incomplete".into())),
    };
    Ok(Model {
        config: cfg.model.clone(),
        params,
        protos,
        trained_epochs,
        noise_stats,
    })
}

/// Writes every run file into `dir`, creating it if needed.
pub fn write_run(dir: &Path, dataset: &str, cfg: &PgibConfig, split: &SplitSpec, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), config_text(dataset, cfg))?;
    fs::write(dir.join(METRICS_FILE), metrics_csv(&outcome.metrics))?;
    let mut log = String::new();
    for e in &outcome.events {
        writeln!(log, "{e}").expect("string write");
    }
    fs::write(dir.join(EVENTS_FILE), log)?;
    checkpoint::save(
        &model_to_arrays(&outcome.model),
        &dir.join(CHECKPOINT_FILE),
        &dir.join(MANIFEST_FILE),
    )?;
    fs::write(
        dir.join(PROJECTIONS_FILE),
        serde_json::to_string_pretty(&outcome.projections)? + "\n",
    )?;
    fs::write(dir.join(SPLIT_FILE), serde_json::to_string(split)? + "\n")?;
    Ok(())
}

/// A run read back from disk.
#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub dataset: String,
    pub config: PgibConfig,
    pub model: Model,
    pub split: SplitSpec,
    pub projections: Vec<ProjectionResult>,
}

fn read(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(PgibError::MissingFile(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?)
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let (config, extra) = PgibConfig::from_kv_with(&read(&dir.join(CONFIG_FILE))?, &[DATASET_KEY])?;
    let dataset = extra
        .get(DATASET_KEY)
        .cloned()
        .ok_or_else(|| PgibError::Config(format!("{CONFIG_FILE} has no dataset key")))?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    if !ckpt.exists() {
        return Err(PgibError::MissingFile(ckpt));
    }
    let model = model_from_arrays(&checkpoint::load(&ckpt)?, &config)?;
    let split = serde_json::from_str(&read(&dir.join(SPLIT_FILE))?)?;
    let projections = serde_json::from_str(&read(&dir.join(PROJECTIONS_FILE))?)?;
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        dataset,
        config,
        model,
        split,
        projections,
    })
}
