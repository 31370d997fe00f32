use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::data::synthetic_task_set;
use crate::corpus::{ManifestBuild, SyntheticConfig};
use crate::encoder::{Embedding, EncoderConfig};
use crate::error::{Error, Result};
use crate::hypernet::{GeneratorParams, GeneratorShape, RepMode, TaskRepresentation};
use crate::learners::{
    init_state, run_stream, AdapterObjective, Algorithm, Architecture, HyperObjective,
    MultiHeadObjective, Objective, Seeds, StreamInputs, TrainerConfig,
};
use crate::metrics::auc_scores;
use crate::neural::{finite_diff_check, Checkpoint, NetShape, ParamVector};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn summary(&self) -> String {
        self.checks
            .iter()
            .map(|c| {
                let verdict = if c.passed { "PASS" } else { "FAIL" };
                format!(
                    "{verdict} {:<18} {:>7.2}s  {}\n",
                    c.name, c.seconds, c.detail
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelftestOptions {
    /// Perturbs the analytic gradients so the gradient check must fail.
    pub corrupt_gradient: bool,
    pub micro_stream: bool,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self {
            corrupt_gradient: false,
            micro_stream: true,
        }
    }
}

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const AUC_TOLERANCE: f64 = 1e-12;

fn uniform(n: usize, scale: f64, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-scale..scale)).collect()
}

/// Largest relative error between analytic and central-difference gradients
/// over the adapter+head network, multi-head sharing and the generator in both
/// representation modes (`d = d_z = 8`, `probes` coordinates per path).
pub fn gradient_suite(probes: usize, seed: u64, corrupt: bool) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let shape = NetShape::new(8, 4, 2);
    let xs: Vec<Vec<f64>> = (0..6).map(|_| uniform(8, 1.0, &mut r)).collect();
    let views: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let ys = [1, 0, 0, 1, 0, 1];
    let rep = TaskRepresentation {
        task_id: "probe".into(),
        long: Embedding(uniform(8, 0.5, &mut r)),
        short: Embedding(uniform(8, 0.5, &mut r)),
    };
    let gshape = GeneratorShape {
        target: shape,
        d_z: 8,
        hidden: 5,
    };
    let objectives: Vec<Box<dyn Objective>> = vec![
        Box::new(AdapterObjective::new(shape)),
        Box::new(MultiHeadObjective::new(shape, 3, 2)),
        Box::new(HyperObjective::new(gshape, rep.clone(), RepMode::Bilevel)),
        Box::new(HyperObjective::new(gshape, rep, RepMode::LongOnly)),
    ];
    let mut worst: f64 = 0.0;
    for (i, obj) in objectives.iter().enumerate() {
        let params = uniform(obj.len(), 0.5, &mut r);
        let (_, mut grad) = obj.loss_grad(&params, &views, &ys)?;
        if corrupt {
            grad.iter_mut().for_each(|g| *g = *g * 1.05 + 1e-3);
        }
        let err = finite_diff_check(
            |p| obj.loss_grad(p, &views, &ys).map_or(f64::NAN, |(l, _)| l),
            &grad,
            &params,
            probes,
            1e-5,
            seed.wrapping_add(i as u64),
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Pair-counting AUC: ties count one half.
pub fn brute_force_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0usize);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Random labelled score sets of size 2..=50 in which about `tie_mass` of the
/// scores repeat an earlier value.
pub fn random_scored_sets(count: usize, tie_mass: f64, seed: u64) -> Vec<(Vec<f64>, Vec<u8>)> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = r.gen_range(2..=50);
            let mut scores: Vec<f64> = Vec::with_capacity(n);
            for _ in 0..n {
                let s = if !scores.is_empty() && r.gen_bool(tie_mass) {
                    scores[r.gen_range(0..scores.len())]
                } else {
                    r.gen_range(-3.0..3.0)
                };
                scores.push(s);
            }
            let mut labels: Vec<u8> = (0..n).map(|_| r.gen_bool(0.4) as u8).collect();
            labels[0] = 1;
            labels[1] = 0;
            (scores, labels)
        })
        .collect()
}

/// Largest absolute difference between [`auc_scores`] and pair counting.
pub fn auc_oracle_suite(count: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (scores, labels) in random_scored_sets(count, 0.3, seed) {
        let oracle = brute_force_auc(&scores, &labels).ok_or(Error::SingleClass)?;
        worst = worst.max((auc_scores(&scores, &labels)? - oracle).abs());
    }
    Ok(worst)
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Flat vector → named blocks → JSON text → flat vector, for adapters and
/// generators; fails unless every value survives bit for bit.
pub fn layout_roundtrip(seed: u64) -> Result<()> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let shape = NetShape::new(8, 4, 2);
    let mut p = ParamVector::zeros(shape);
    p.values = uniform(p.values.len(), 1.0, &mut r);
    let text = serde_json::to_string(&Checkpoint::from_params(&p))?;
    let back = serde_json::from_str::<Checkpoint>(&text)?.params()?;
    if bits(&back.values) != bits(&p.values) {
        return Err(Error::IncompatibleSnapshot(
            "adapter round trip changed values".into(),
        ));
    }
    let gshape = GeneratorShape {
        target: shape,
        d_z: 8,
        hidden: 5,
    };
    let n = GeneratorParams::zeros(gshape).values.len();
    let g = GeneratorParams::from_values(gshape, uniform(n, 1.0, &mut r))?;
    let text = serde_json::to_string(&g.to_checkpoint())?;
    let back = GeneratorParams::from_checkpoint(&serde_json::from_str(&text)?)?;
    if bits(&back.values) != bits(&g.values) {
        return Err(Error::IncompatibleSnapshot(
            "generator round trip changed values".into(),
        ));
    }
    Ok(())
}

/// Trains a sequential adapter on two separable synthetic tasks and returns
/// the lowest instant test AUC.
pub fn micro_stream(seed: u64) -> Result<f64> {
    let build = ManifestBuild {
        min_positives: 20,
        ..ManifestBuild::default()
    };
    let synth = SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    };
    let encoder = EncoderConfig::with_dim(64);
    let tasks = synthetic_task_set(&synth, &build, "chronological", &encoder, seed)?;
    let trainer = TrainerConfig {
        batch_size: 16,
        max_epochs: 30,
        learning_rate: 1e-2,
        ..TrainerConfig::default()
    };
    let inputs = StreamInputs {
        algorithm: Algorithm::Vanilla,
        architecture: Architecture::Adapter,
        shape: NetShape::new(64, 8, 1),
        generator_hidden: 8,
        trainer: &trainer,
        lambda: 0.0,
        seeds: Seeds {
            data: seed,
            init: seed,
            sampler: seed,
        },
    };
    let mut state = init_state(&inputs)?;
    run_stream(&inputs, &tasks.upstream, &mut state, &mut |_| Ok(true))?;
    state
        .outcomes
        .iter()
        .map(|o| o.test_auc.ok_or(Error::SingleClass))
        .try_fold(f64::INFINITY, |m, a| Ok(m.min(a?)))
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    Check {
        name: name.into(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs the built-in checks. Failures are reported, never raised.
pub fn selftest(opts: SelftestOptions) -> SelftestReport {
    let mut checks = vec![
        timed("gradients", || {
            let err = gradient_suite(100, 0, opts.corrupt_gradient)?;
            Ok((
                err < GRADIENT_TOLERANCE,
                format!("max relative error {err:.3e}"),
            ))
        }),
        timed("auc-oracle", || {
            let err = auc_oracle_suite(200, 0)?;
            Ok((
                err <= AUC_TOLERANCE,
                format!("max abs difference {err:.3e} over 200 sets"),
            ))
        }),
        timed("layout-roundtrip", || {
            layout_roundtrip(0)?;
            Ok((true, "bit-exact".into()))
        }),
    ];
    if opts.micro_stream {
        checks.push(timed("micro-stream", || {
            let auc = micro_stream(0)?;
            Ok((auc > 0.9, format!("min instant AUC {auc:.6}")))
        }));
    }
    SelftestReport { checks }
}
