//! Synthetic salary data with a known causal structure.
//!
//! Reference equations (`N` is a fresh standard normal draw each time,
//! `sigma` the logistic function):
//!
//! ```text
//! gender     ~ Bernoulli(0.5)                  1 = male, 0 = female
//! age        = 18 + Gamma(shape 3, scale 6)
//! interests  ~ N(0, 1)                         latent
//! experience ~ N(0, 1)                         latent
//! education  = sigma(-1.2 + 0.06 (age - 18) + 0.6 N)
//! field      ~ Bernoulli(sigma(-1.5 + 3 gender + interests))
//! seniority  = softplus(-0.2 + 0.6 gender + 0.5 field + 2 education + 0.5 experience + 0.2 N)
//! salary     = exp(9.6 + 0.25 seniority + 0.3 education + 0.1 field + 0.1 N)
//! ```
//!
//! After generation each woman is discarded with probability
//! `tanh(beta (age - 18) / 2)`, so older women are under-represented and
//! gender and age become dependent in the released table. The latent
//! variables are not part of the output.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};

use super::dataset::{Column, Dataset};
use super::spec::{GraphSpec, NodeSpec};
use crate::autodiff::{sigmoid, softplus};
use crate::error::{Error, Result};
use crate::units::UnitKind;

/// Observable columns in output order.
pub const SALARY_COLUMNS: [&str; 6] = ["gender", "age", "education", "field", "seniority", "salary"];

/// Selection strength that yields a gender–age correlation of about 0.29;
/// the result of [`calibrate_beta`] with its default arguments.
pub const CALIBRATED_BETA: f64 = 0.1263;

/// Gender–age correlation the selection mechanism is calibrated to.
pub const TARGET_GENDER_AGE_CORRELATION: f64 = 0.29;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SalaryGenConfig {
    pub n: usize,
    pub seed: u64,
    pub beta: f64,
}

impl SalaryGenConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            beta: CALIBRATED_BETA,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Person {
    gender: f64,
    age: f64,
    education: f64,
    field: f64,
    seniority: f64,
    salary: f64,
}

/// Ground-truth mechanism with optional interventions on gender and age.
#[derive(Debug, Clone, Copy, Default)]
pub struct SalaryIntervention {
    pub gender: Option<f64>,
    pub age: Option<f64>,
}

fn draw_person<R: Rng>(rng: &mut R, gamma: &Gamma<f64>, doing: SalaryIntervention) -> Person {
    let g_u: f64 = rng.random();
    let gender = doing.gender.unwrap_or(if g_u < 0.5 { 1.0 } else { 0.0 });
    let age = doing.age.unwrap_or(18.0 + rng.sample(gamma));
    let interests: f64 = rng.sample(StandardNormal);
    let experience: f64 = rng.sample(StandardNormal);
    let e_noise: f64 = rng.sample(StandardNormal);
    let education = sigmoid(-1.2 + 0.06 * (age - 18.0) + 0.6 * e_noise);
    let f_u: f64 = rng.random();
    let field = if f_u < sigmoid(-1.5 + 3.0 * gender + interests) { 1.0 } else { 0.0 };
    let s_noise: f64 = rng.sample(StandardNormal);
    let seniority = softplus(-0.2 + 0.6 * gender + 0.5 * field + 2.0 * education + 0.5 * experience + 0.2 * s_noise);
    let w_noise: f64 = rng.sample(StandardNormal);
    let salary = (9.6 + 0.25 * seniority + 0.3 * education + 0.1 * field + 0.1 * w_noise).exp();
    Person {
        gender,
        age,
        education,
        field,
        seniority,
        salary,
    }
}

fn generate(cfg: &SalaryGenConfig, doing: SalaryIntervention, select: bool) -> Result<Vec<Person>> {
    if cfg.n == 0 {
        return Err(Error::Config("salary generator needs n >= 1".into()));
    }
    if !(cfg.beta >= 0.0 && cfg.beta.is_finite()) {
        return Err(Error::Config(format!("selection strength must be >= 0, got {}", cfg.beta)));
    }
    let gamma = Gamma::new(3.0, 6.0).expect("valid gamma");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.n);
    while out.len() < cfg.n {
        let p = draw_person(&mut rng, &gamma, doing);
        let u: f64 = rng.random();
        let dropped = select && p.gender == 0.0 && u < (cfg.beta * (p.age - 18.0) / 2.0).tanh();
        if !dropped {
            out.push(p);
        }
    }
    Ok(out)
}

fn to_dataset(people: &[Person]) -> Result<Dataset> {
    let col = |f: fn(&Person) -> f64| people.iter().map(f).collect::<Vec<f64>>();
    Dataset::new(vec![
        Column::categorical("gender", vec![0, 1], col(|p| p.gender)),
        Column::continuous("age", col(|p| p.age)),
        Column::continuous("education", col(|p| p.education)),
        Column::categorical("field", vec![0, 1], col(|p| p.field)),
        Column::continuous("seniority", col(|p| p.seniority)),
        Column::continuous("salary", col(|p| p.salary)),
    ])
}

/// Generate `cfg.n` rows after selection, deterministic in `cfg.seed`.
pub fn gen_salary(cfg: &SalaryGenConfig) -> Result<Dataset> {
    to_dataset(&generate(cfg, SalaryIntervention::default(), true)?)
}

/// Draw from the generating mechanism under an intervention, without the
/// selection step (an intervention on the population, not the sample).
pub fn gen_salary_intervened(cfg: &SalaryGenConfig, doing: SalaryIntervention) -> Result<Dataset> {
    to_dataset(&generate(cfg, doing, false)?)
}

/// Graph matching the generator's structure. The selection effect is
/// represented by a latent confounder between gender and age; the latent
/// interests and experience act only as node noise.
pub fn salary_graph_spec(seed: u64) -> GraphSpec {
    GraphSpec::new(
        seed,
        vec![
            NodeSpec::new("stay_at_home", UnitKind::Confounder, &[]),
            NodeSpec::new("gender", UnitKind::Bernoulli, &["stay_at_home"]),
            NodeSpec::new("age", UnitKind::Flow, &["stay_at_home"]),
            NodeSpec::new("education", UnitKind::Flow, &["age"]),
            NodeSpec::new("field", UnitKind::Bernoulli, &["gender"]),
            NodeSpec::new("seniority", UnitKind::Flow, &["gender", "field", "education"]),
            NodeSpec::new("salary", UnitKind::Flow, &["seniority", "education", "field"]),
        ],
    )
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

pub fn gender_age_correlation(data: &Dataset) -> Result<f64> {
    Ok(pearson(data.values("gender")?, data.values("age")?))
}

/// Bisection for the selection strength on `[0, 0.2]` (where the
/// correlation increases with `beta`) that hits `target`, using `n` rows
/// drawn with common random numbers from `seed`.
pub fn calibrate_beta(target: f64, n: usize, seed: u64) -> Result<f64> {
    let corr = |beta: f64| -> Result<f64> { gender_age_correlation(&gen_salary(&SalaryGenConfig { n, seed, beta })?) };
    let (mut lo, mut hi) = (0.0, 0.2);
    if corr(hi)? < target {
        return Err(Error::Config(format!("correlation {target} is not reachable")));
    }
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if corr(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
