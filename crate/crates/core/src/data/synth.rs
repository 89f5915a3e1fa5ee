//! Synthetic multi-task data with controllable heterogeneity.
//!
//! All regimes label inputs with linear rules `argmax_k (W x)_k`, so every
//! task is learnable by a logistic model on its own. What changes between
//! regimes is how the rules and inputs relate across tasks:
//!
//! * `conflicting`: every task sees the same pool of inputs, but each task
//!   labels it with its own rule. Rules are spread around a base rule so that
//!   two tasks disagree on a `conflict_rate` fraction of the shared inputs in
//!   expectation (exact for two classes).
//! * `distinct`: each task draws inputs from its own slab of the first
//!   coordinate and labels them with a mostly private rule.
//! * `similar`: one global rule with a margin labels every task's inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::PrngStream;

use super::{Example, TaskId, TaskSpec};

/// Fraction of each distinct-regime slab left empty, separating regions.
pub const REGION_GAP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeterogeneityRegime {
    Conflicting { conflict_rate: f64 },
    Distinct { shared_rule: f64 },
    Similar { margin: f64 },
}

impl HeterogeneityRegime {
    fn parameter(&self) -> (&'static str, f64) {
        match *self {
            Self::Conflicting { conflict_rate } => ("conflict_rate", conflict_rate),
            Self::Distinct { shared_rule } => ("shared_rule", shared_rule),
            Self::Similar { margin } => ("margin", margin),
        }
    }

    /// Region tag of an input in the distinct regime with `tasks` tasks.
    pub fn region_of(features: &[f64], tasks: usize) -> usize {
        let width = 2.0 / tasks as f64;
        ((features[0] + 1.0) / width).floor() as usize
    }
}

/// Every generator input, serialized with no implicit defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub regime: HeterogeneityRegime,
    pub tasks: usize,
    pub n_per_task: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn generate(&self) -> Result<Vec<TaskSpec>> {
        synth_generate(
            self.regime,
            self.tasks,
            self.n_per_task,
            self.input_dim,
            self.num_classes,
            self.seed,
        )
    }
}

type Rule = Vec<Vec<f64>>;

fn gaussian_rule(stream: &mut PrngStream, classes: usize, dim: usize) -> Rule {
    let mut rule: Rule = (0..classes)
        .map(|_| (0..dim).map(|_| stream.next_gaussian()).collect())
        .collect();
    // Centering makes a two-class rule antisymmetric, so its decision
    // boundary is the hyperplane orthogonal to row 1.
    for j in 0..dim {
        let mean = rule.iter().map(|row| row[j]).sum::<f64>() / classes as f64;
        for row in &mut rule {
            row[j] -= mean;
        }
    }
    rule
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn argmax(rule: &Rule, x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (k, row) in rule.iter().enumerate() {
        let s = dot(row, x);
        if s > best_score {
            best = k;
            best_score = s;
        }
    }
    best
}

fn top_two_gap(rule: &Rule, x: &[f64]) -> f64 {
    let mut scores: Vec<f64> = rule.iter().map(|row| dot(row, x)).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    if scores.len() < 2 {
        f64::INFINITY
    } else {
        scores[0] - scores[1]
    }
}

/// Row-wise: removes the component along `base[k]` and rescales to `|base[k]|`.
fn orthogonal_departure(base: &Rule, mut dep: Rule) -> Rule {
    for (row, b) in dep.iter_mut().zip(base) {
        let bb = dot(b, b);
        if bb > 0.0 {
            let c = dot(row, b) / bb;
            row.iter_mut().zip(b).for_each(|(r, bv)| *r -= c * bv);
        }
        let norm = dot(row, row).sqrt();
        if norm > 1e-12 {
            let scale = bb.sqrt() / norm;
            row.iter_mut().for_each(|r| *r *= scale);
        }
    }
    dep
}

fn blend(a: &Rule, wa: f64, b: &Rule, wb: f64) -> Rule {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| wa * x + wb * y).collect())
        .collect()
}

fn negate(a: &Rule) -> Rule {
    a.iter().map(|row| row.iter().map(|x| -x).collect()).collect()
}

/// Departure angle from the base rule for `tasks` tasks at `rate`.
///
/// Two tasks get antithetic departures, so their rules sit at angle
/// `2 * phi = pi * rate`. More tasks get independent departures, whose
/// pairwise cosine is `cos^2(phi)` in expectation; that needs `rate <= 1/2`.
fn departure_angle(rate: f64, tasks: usize) -> Result<f64> {
    use std::f64::consts::PI;
    if tasks <= 2 {
        return Ok(PI * rate / 2.0);
    }
    let target = (PI * rate).cos();
    if target < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "conflict_rate {rate} above 0.5 cannot be realized by {tasks} tasks"
        )));
    }
    Ok(target.sqrt().acos())
}

/// Generates `tasks` tasks of `n_per_task` examples each. Deterministic in
/// all arguments.
pub fn synth_generate(
    regime: HeterogeneityRegime,
    tasks: usize,
    n_per_task: usize,
    input_dim: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Vec<TaskSpec>> {
    if tasks == 0 || n_per_task == 0 || input_dim == 0 || num_classes == 0 {
        return Err(Error::InvalidParameter(
            "tasks, n_per_task, input_dim and num_classes must all be at least 1".into(),
        ));
    }
    let (name, value) = regime.parameter();
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {value}")));
    }
    if tasks > u32::MAX as usize {
        return Err(Error::InvalidParameter("too many tasks".into()));
    }
    let root = PrngStream::new(seed);
    let base = gaussian_rule(&mut root.named("base-rule"), num_classes, input_dim);
    let task_seed = |t: usize| root.named("task").child(t as u64).seed();

    let mut out = Vec::with_capacity(tasks);
    match regime {
        HeterogeneityRegime::Conflicting { conflict_rate } => {
            let phi = departure_angle(conflict_rate, tasks)?;
            let mut pool_stream = root.named("pool");
            let pool: Vec<Vec<f64>> = (0..n_per_task)
                .map(|_| (0..input_dim).map(|_| pool_stream.next_gaussian()).collect())
                .collect();
            let first_departure = orthogonal_departure(
                &base,
                gaussian_rule(&mut root.named("departure").child(0), num_classes, input_dim),
            );
            for t in 0..tasks {
                let departure = if tasks == 2 && t == 1 {
                    negate(&first_departure)
                } else if t == 0 {
                    first_departure.clone()
                } else {
                    orthogonal_departure(
                        &base,
                        gaussian_rule(&mut root.named("departure").child(t as u64), num_classes, input_dim),
                    )
                };
                let rule = blend(&base, phi.cos(), &departure, phi.sin());
                let mut order: Vec<usize> = (0..n_per_task).collect();
                root.named("order").child(t as u64).shuffle(&mut order);
                let examples = order
                    .into_iter()
                    .map(|i| Example { label: argmax(&rule, &pool[i]), features: pool[i].clone() })
                    .collect();
                out.push(TaskSpec::with_tail_split(TaskId(t as u32), examples, task_seed(t))?);
            }
        }
        HeterogeneityRegime::Distinct { shared_rule } => {
            let width = 2.0 / tasks as f64;
            for t in 0..tasks {
                let s = PrngStream::new(task_seed(t));
                let private = gaussian_rule(&mut s.named("rule"), num_classes, input_dim);
                let rule = blend(&base, shared_rule.sqrt(), &private, (1.0 - shared_rule).sqrt());
                let lo = -1.0 + t as f64 * width;
                let mut xs = s.named("inputs");
                let examples = (0..n_per_task)
                    .map(|_| {
                        let mut x: Vec<f64> = Vec::with_capacity(input_dim);
                        x.push(lo + (1.0 - REGION_GAP) * width * xs.next_f64());
                        x.extend((1..input_dim).map(|_| xs.next_gaussian()));
                        Example { label: argmax(&rule, &x), features: x }
                    })
                    .collect();
                out.push(TaskSpec::with_tail_split(TaskId(t as u32), examples, task_seed(t))?);
            }
        }
        HeterogeneityRegime::Similar { margin } => {
            let scale = base.iter().map(|r| dot(r, r).sqrt()).sum::<f64>() / num_classes as f64
                * std::f64::consts::SQRT_2;
            for t in 0..tasks {
                let mut xs = PrngStream::new(task_seed(t)).named("inputs");
                let mut examples = Vec::with_capacity(n_per_task);
                while examples.len() < n_per_task {
                    let x: Vec<f64> = (0..input_dim).map(|_| xs.next_gaussian()).collect();
                    if scale == 0.0 || top_two_gap(&base, &x) >= margin * scale {
                        examples.push(Example { label: argmax(&base, &x), features: x });
                    }
                }
                out.push(TaskSpec::with_tail_split(TaskId(t as u32), examples, task_seed(t))?);
            }
        }
    }
    Ok(out)
}
