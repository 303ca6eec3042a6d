//! One-step training triplets: sampling, persistence and splitting.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::deeponet::LocalInput;
use crate::error::{Error, Result};
use crate::systems::{rk4_chain, system_by_name, OdeSystem};

pub const DATASET_FORMAT: &str = "operon-dataset-v1";

/// Largest RK-4 sub-step used when labelling a triplet.
pub const MAX_SUBSTEP: f64 = 0.01;

/// `(x(t_n), u samples, h, x(t_n + h))`, plus the number of RK-4 sub-steps
/// used to produce the label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingTriplet {
    pub state: Vec<f64>,
    pub local_input: LocalInput,
    pub h: f64,
    pub next_state: Vec<f64>,
    pub substeps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub system: String,
    pub count: usize,
    /// `[lo, hi]`; sampled values lie in `(lo, hi]`.
    pub h_range: (f64, f64),
    #[serde(default = "one_sensor")]
    pub num_sensors: usize,
    pub seed: u64,
}

fn one_sensor() -> usize {
    1
}

impl SamplingSpec {
    /// Default sizes and step ranges for each registered system.
    pub fn for_system(system: &str, seed: u64) -> Result<Self> {
        let (count, h_range) = match system {
            "pendulum" => (5000, (0.0, 0.02)),
            "predator_prey" => (2000, (0.0, 0.25)),
            "cart_pole" => (20000, (0.0, 0.25)),
            "lorenz63" => (20000, (0.0, 0.02)),
            other => return Err(Error::Config(format!("unknown system '{other}'"))),
        };
        Ok(SamplingSpec {
            system: system.to_string(),
            count,
            h_range,
            num_sensors: 1,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        system_by_name(&self.system)?;
        let (lo, hi) = self.h_range;
        if self.count == 0 {
            return Err(Error::Config("dataset count must be positive".into()));
        }
        if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::Config(format!("invalid step range [{lo}, {hi}]")));
        }
        if self.num_sensors == 0 {
            return Err(Error::Config("num_sensors must be positive".into()));
        }
        Ok(())
    }
}

/// RK-4 sub-step count that keeps every sub-step at most [`MAX_SUBSTEP`]
/// (up to rounding, so that `h = 0.1` gives 10 rather than 11).
pub fn substeps_for(h: f64) -> usize {
    ((h / MAX_SUBSTEP * (1.0 - 1e-12)).ceil() as usize).max(1)
}

/// Truth label for one triplet; `h = 0` maps a state to itself.
pub fn label(system: &OdeSystem, state: &[f64], u: f64, h: f64, substeps: usize) -> Result<Vec<f64>> {
    if h == 0.0 {
        return Ok(state.to_vec());
    }
    rk4_chain(system, state, u, h, substeps)
}

fn sample_triplet(system: &OdeSystem, spec: &SamplingSpec, index: u64) -> Result<TrainingTriplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let state: Vec<f64> = system
        .state_space
        .iter()
        .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
        .collect();
    let (ulo, uhi) = system.input_space;
    let u = ulo + (uhi - ulo) * rng.random::<f64>();
    let (lo, hi) = spec.h_range;
    let h = hi - (hi - lo) * rng.random::<f64>();
    let mut interior: Vec<f64> = (1..spec.num_sensors)
        .map(|_| h * rng.random::<f64>())
        .collect();
    interior.sort_by(f64::total_cmp);
    let mut offsets = vec![0.0];
    offsets.extend(interior.into_iter().map(|d| -d));
    let substeps = substeps_for(h);
    let next_state = label(system, &state, u, h, substeps)?;
    Ok(TrainingTriplet {
        state,
        local_input: LocalInput {
            values: vec![u; spec.num_sensors],
            offsets,
        },
        h,
        next_state,
        substeps,
    })
}

/// Draws `spec.count` triplets. Each triplet has its own random stream, so the
/// result does not depend on how generation is scheduled across threads.
pub fn generate(spec: &SamplingSpec) -> Result<Vec<TrainingTriplet>> {
    spec.validate()?;
    let system = system_by_name(&spec.system)?;
    (0..spec.count as u64)
        .into_par_iter()
        .map(|i| sample_triplet(&system, spec, i))
        .collect()
}

/// Recomputes every label and returns the largest Euclidean deviation.
pub fn max_regeneration_error(system: &OdeSystem, triplets: &[TrainingTriplet]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for t in triplets {
        let again = label(system, &t.state, t.local_input.values[0], t.h, t.substeps)?;
        let err = again
            .iter()
            .zip(&t.next_state)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(err);
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub system: String,
    pub spec: SamplingSpec,
    pub count: usize,
    pub hash: String,
}

/// A dataset together with its header.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub triplets: Vec<TrainingTriplet>,
}

fn record_lines(triplets: &[TrainingTriplet]) -> Result<Vec<String>> {
    triplets
        .iter()
        .map(|t| serde_json::to_string(t).map_err(Error::from))
        .collect()
}

fn hash_lines(lines: &[String]) -> String {
    let mut hasher = Sha256::new();
    for line in lines {
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// Content fingerprint of a triplet list, as stored in the header.
pub fn fingerprint(triplets: &[TrainingTriplet]) -> Result<String> {
    Ok(hash_lines(&record_lines(triplets)?))
}

impl Dataset {
    pub fn new(spec: SamplingSpec, triplets: Vec<TrainingTriplet>) -> Result<Self> {
        let hash = fingerprint(&triplets)?;
        Ok(Dataset {
            header: DatasetHeader {
                format: DATASET_FORMAT.to_string(),
                system: spec.system.clone(),
                count: triplets.len(),
                spec,
                hash,
            },
            triplets,
        })
    }

    pub fn generate(spec: SamplingSpec) -> Result<Self> {
        let triplets = generate(&spec)?;
        Dataset::new(spec, triplets)
    }

    pub fn to_text(&self) -> Result<String> {
        let lines = record_lines(&self.triplets)?;
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for line in lines {
            out.push_str(&line);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(self.to_text()?.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::CorruptDataset("empty file".into()))?;
        let raw: serde_json::Value =
            serde_json::from_str(first).map_err(|e| Error::CorruptDataset(format!("header: {e}")))?;
        match raw.get("format").and_then(|f| f.as_str()) {
            Some(DATASET_FORMAT) => {}
            Some(other) => return Err(Error::Version(format!("dataset format '{other}', expected '{DATASET_FORMAT}'"))),
            None => return Err(Error::Version("dataset header has no format tag".into())),
        }
        let header: DatasetHeader =
            serde_json::from_value(raw).map_err(|e| Error::Version(format!("dataset header: {e}")))?;
        let records: Vec<String> = lines.filter(|l| !l.is_empty()).map(str::to_string).collect();
        if records.len() != header.count {
            return Err(Error::CorruptDataset(format!(
                "header announces {} records, found {}",
                header.count,
                records.len()
            )));
        }
        let hash = hash_lines(&records);
        if hash != header.hash {
            return Err(Error::CorruptDataset(format!(
                "content hash {hash} does not match header {}",
                header.hash
            )));
        }
        let triplets = records
            .iter()
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Version(format!("record {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<TrainingTriplet>>>()?;
        Ok(Dataset { header, triplets })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Dataset::from_text(&fs::read_to_string(path)?)
    }

    pub fn state_dim(&self) -> usize {
        self.triplets.first().map_or(0, |t| t.state.len())
    }

    pub fn num_sensors(&self) -> usize {
        self.triplets.first().map_or(0, |t| t.local_input.values.len())
    }
}

/// Shuffled split into `(train, holdout)` with `round(fraction·N)` held out.
pub fn split(
    triplets: &[TrainingTriplet],
    holdout_fraction: f64,
    seed: u64,
) -> Result<(Vec<TrainingTriplet>, Vec<TrainingTriplet>)> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::Config(format!(
            "holdout fraction must lie in (0, 1), got {holdout_fraction}"
        )));
    }
    let holdout = (holdout_fraction * triplets.len() as f64).round() as usize;
    if holdout == 0 || holdout == triplets.len() {
        return Err(Error::Config(format!(
            "holdout fraction {holdout_fraction} leaves an empty side for {} records",
            triplets.len()
        )));
    }
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (held, kept) = order.split_at(holdout);
    let pick = |idx: &[usize]| idx.iter().map(|&i| triplets[i].clone()).collect::<Vec<_>>();
    Ok((pick(kept), pick(held)))
}
