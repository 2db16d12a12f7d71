//! Causal units: per-node `sample` / `loglk` / `abduct` over a parameter
//! network and a distribution head.
//!
//! A unit turns its encoded inputs (parents and confounders) into a parameter
//! row `theta`, either through an MLP or, for parentless nodes, a free
//! learnable vector. Continuous heads work on normalized values; the
//! normalizer's log-scale correction is added to every log-density.

pub mod ald;
pub mod bernoulli;
pub mod categorical;
pub mod normal;
mod normalizer;

use rand::distr::{Open01, StandardUniform};
use rand::Rng;
use rand_distr::{Gumbel, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Mlp, MlpSpec, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::flows::{self, FlowShape, FlowStack};
pub use normalizer::Normalizer;

/// Attempts allowed when rejection-sampling a categorical noise posterior.
pub const REJECTION_CAP: usize = 10_000;

/// Default hidden widths for non-linear parameter networks.
pub const DEFAULT_HIDDEN: [usize; 2] = [32, 32];

/// Scale applied to the initial output-layer weights so every unit starts
/// close to its head's default parameters.
const OUTPUT_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum UnitKind {
    Flow,
    Normal,
    Ald,
    Glm,
    Bernoulli,
    Categorical { classes: usize },
    Confounder,
}

impl UnitKind {
    pub fn is_continuous(self) -> bool {
        matches!(self, UnitKind::Flow | UnitKind::Normal | UnitKind::Ald | UnitKind::Glm)
    }

    pub fn is_discrete(self) -> bool {
        matches!(self, UnitKind::Bernoulli | UnitKind::Categorical { .. })
    }

    pub fn label(self) -> &'static str {
        match self {
            UnitKind::Flow => "flow",
            UnitKind::Normal => "normal",
            UnitKind::Ald => "ald",
            UnitKind::Glm => "glm",
            UnitKind::Bernoulli => "bernoulli",
            UnitKind::Categorical { .. } => "categorical",
            UnitKind::Confounder => "confounder",
        }
    }

    /// Width of the encoding this node contributes to its children's inputs.
    pub fn encoded_width(self) -> usize {
        match self {
            UnitKind::Categorical { classes } => classes,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitSpec {
    pub kind: UnitKind,
    pub hidden: Vec<usize>,
    pub flow: FlowShape,
}

impl UnitSpec {
    pub fn new(kind: UnitKind) -> Self {
        Self {
            kind,
            hidden: DEFAULT_HIDDEN.to_vec(),
            flow: FlowShape::default(),
        }
    }
}

/// One exogenous noise realization.
#[derive(Debug, Clone, PartialEq)]
pub enum Noise {
    Scalar(f64),
    /// Gumbel perturbations, one per class.
    Vector(Vec<f64>),
}

impl Noise {
    pub fn scalar(&self) -> Option<f64> {
        match self {
            Noise::Scalar(e) => Some(*e),
            Noise::Vector(_) => None,
        }
    }
}

/// Posterior over a unit's noise given its value and parents.
#[derive(Debug, Clone, PartialEq)]
pub enum NoisePosterior {
    /// Invertible units: the noise is determined.
    Exact(f64),
    /// Bernoulli: uniform on `[lo, hi)`.
    Interval { lo: f64, hi: f64 },
    /// Categorical: Gumbel vectors whose perturbed argmax is `class`.
    Rejection { logits: Vec<f64>, class: usize },
}

impl NoisePosterior {
    /// One posterior draw; `None` when rejection sampling exhausts [`REJECTION_CAP`].
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Noise> {
        match self {
            NoisePosterior::Exact(e) => Some(Noise::Scalar(*e)),
            NoisePosterior::Interval { lo, hi } => loop {
                let u: f64 = rng.sample(StandardUniform);
                let e = lo + (hi - lo) * u;
                if e < *hi {
                    return Some(Noise::Scalar(e));
                }
            },
            NoisePosterior::Rejection { logits, class } => {
                let gumbel = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
                for _ in 0..REJECTION_CAP {
                    let g: Vec<f64> = (0..logits.len()).map(|_| rng.sample(gumbel)).collect();
                    if categorical::sample(logits, &g) as usize == *class {
                        return Some(Noise::Vector(g));
                    }
                }
                None
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ParamNet {
    None,
    Free { name: String, len: usize },
    Net(Mlp),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    name: String,
    kind: UnitKind,
    input_dim: usize,
    flow: FlowShape,
    net: ParamNet,
    normalizer: Option<Normalizer>,
}

impl Unit {
    /// `input_dim` is the width of the encoded parent and confounder inputs.
    pub fn new(name: &str, spec: &UnitSpec, input_dim: usize) -> Result<Self> {
        let kind = spec.kind;
        match kind {
            UnitKind::Categorical { classes } if classes < 2 => {
                return Err(Error::InvalidGraph(format!("`{name}`: categorical needs at least 2 classes")));
            }
            UnitKind::Flow if spec.flow.layers == 0 || spec.flow.units == 0 => {
                return Err(Error::InvalidGraph(format!("`{name}`: flow needs at least one layer and unit")));
            }
            UnitKind::Confounder if input_dim > 0 => {
                return Err(Error::InvalidGraph(format!("confounder `{name}` cannot have parents")));
            }
            _ => {}
        }
        let mut unit = Self {
            name: name.to_string(),
            kind,
            input_dim,
            flow: spec.flow,
            net: ParamNet::None,
            normalizer: kind.is_continuous().then(Normalizer::identity),
        };
        let len = unit.theta_len();
        unit.net = if kind == UnitKind::Confounder {
            ParamNet::None
        } else if input_dim == 0 {
            ParamNet::Free {
                name: format!("{name}.theta"),
                len,
            }
        } else {
            let hidden = if kind == UnitKind::Glm { Vec::new() } else { spec.hidden.clone() };
            ParamNet::Net(Mlp::new(name, MlpSpec::new(input_dim, hidden, len))?)
        };
        Ok(unit)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> UnitKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn flow_shape(&self) -> FlowShape {
        self.flow
    }

    pub fn normalizer(&self) -> Option<Normalizer> {
        self.normalizer
    }

    pub fn set_normalizer(&mut self, n: Normalizer) -> Result<()> {
        if !self.kind.is_continuous() {
            return Err(Error::Contract(format!("`{}` is not continuous", self.name)));
        }
        self.normalizer = Some(n);
        Ok(())
    }

    /// Number of columns in the parameter row.
    pub fn theta_len(&self) -> usize {
        match self.kind {
            UnitKind::Normal | UnitKind::Glm => 2,
            UnitKind::Ald => 3,
            UnitKind::Flow => self.flow.theta_len(),
            UnitKind::Bernoulli => 1,
            UnitKind::Categorical { classes } => classes,
            UnitKind::Confounder => 0,
        }
    }

    /// Head parameters a freshly initialized unit starts from.
    pub fn initial_theta(&self) -> Vec<f64> {
        match self.kind {
            UnitKind::Normal | UnitKind::Glm => vec![0.0, 0.0],
            // Unit-variance symmetric Laplace: lambda = sqrt(2).
            UnitKind::Ald => vec![0.0, 0.5 * 2f64.ln(), 0.0],
            UnitKind::Flow => flows::default_theta(self.flow),
            UnitKind::Bernoulli => vec![0.0],
            UnitKind::Categorical { classes } => vec![0.0; classes],
            UnitKind::Confounder => Vec::new(),
        }
    }

    pub fn init_params<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        match &self.net {
            ParamNet::None => Ok(()),
            ParamNet::Free { name, len } => store.insert(name, 1, *len, self.initial_theta()),
            ParamNet::Net(mlp) => mlp.init(store, rng, Some(&self.initial_theta()), OUTPUT_INIT_SCALE),
        }
    }

    /// Names of the trainable parameter blocks this unit owns.
    pub fn param_names(&self) -> Vec<String> {
        match &self.net {
            ParamNet::None => Vec::new(),
            ParamNet::Free { name, .. } => vec![name.clone()],
            ParamNet::Net(mlp) => (0..mlp.num_layers())
                .flat_map(|l| [mlp.weight_name(l), mlp.bias_name(l)])
                .collect(),
        }
    }

    fn wrap<T>(&self, r: Result<T>) -> Result<T> {
        r.map_err(|e| Error::unit(&self.name, e))
    }

    /// Parameter rows on the tape: `1 x P` for free parameters, `n x P` for networks.
    pub fn theta_tape(&self, tape: &mut Tape, store: &ParamStore, inputs: Option<Var>) -> Result<Var> {
        match &self.net {
            ParamNet::None => Err(Error::Contract(format!("`{}` has no parameters", self.name))),
            ParamNet::Free { name, .. } => store.on_tape(tape, name),
            ParamNet::Net(mlp) => {
                let x = inputs.ok_or_else(|| Error::Contract(format!("`{}` needs parent inputs", self.name)))?;
                self.wrap(mlp.forward(tape, store, x))
            }
        }
    }

    /// Forward-only parameter rows for `inputs` (`n x input_dim`). Free
    /// parameters come back as a single row that applies to every input row.
    pub fn theta(&self, store: &ParamStore, inputs: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let x = match &self.net {
            ParamNet::Net(_) => Some(tape.constant(inputs.clone())?),
            _ => None,
        };
        let th = self.theta_tape(&mut tape, store, x)?;
        Ok(tape.matrix(th))
    }

    pub fn check_value(&self, x: f64) -> Result<()> {
        let ok = match self.kind {
            UnitKind::Bernoulli => x == 0.0 || x == 1.0,
            UnitKind::Categorical { classes } => x >= 0.0 && x.fract() == 0.0 && (x as usize) < classes,
            _ => x.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Support {
                node: self.name.clone(),
                value: x,
            })
        }
    }

    fn norm(&self) -> Normalizer {
        self.normalizer.unwrap_or_else(Normalizer::identity)
    }

    /// Per-row log-likelihood (`n x 1`) of `values` given parameter rows `theta`.
    pub fn loglk_tape(&self, tape: &mut Tape, theta: Option<Var>, values: &[f64]) -> Result<Var> {
        for &x in values {
            self.check_value(x)?;
        }
        let r = (|| {
            let theta = || theta.ok_or_else(|| Error::Contract("missing parameter rows".into()));
            match self.kind {
                UnitKind::Bernoulli => bernoulli::loglk_tape(tape, theta()?, values),
                UnitKind::Categorical { classes } => {
                    let cls: Vec<usize> = values.iter().map(|&v| v as usize).collect();
                    categorical::loglk_tape(tape, theta()?, &cls, classes)
                }
                UnitKind::Confounder => {
                    let z = tape.constant(Matrix::column(values.to_vec()))?;
                    let sq = tape.square(z)?;
                    let h = tape.scale(sq, -0.5)?;
                    tape.offset(h, -normal::HALF_LN_2PI)
                }
                _ => {
                    let n = self.norm();
                    let z = tape.constant(Matrix::column(values.iter().map(|&x| n.normalize(x)).collect()))?;
                    let l = match self.kind {
                        UnitKind::Ald => ald::loglk_tape(tape, theta()?, z)?,
                        UnitKind::Flow => flows::loglk_tape(tape, theta()?, z, self.flow)?,
                        _ => normal::loglk_tape(tape, theta()?, z)?,
                    };
                    tape.offset(l, n.loglk_correction())
                }
            }
        })();
        self.wrap(r)
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta_len() {
            return Err(Error::Shape {
                context: "unit theta",
                detail: format!("`{}` expects {} parameters, got {}", self.name, self.theta_len(), theta.len()),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::UnitEvaluation {
                node: self.name.clone(),
                detail: "non-finite network output".into(),
            });
        }
        Ok(())
    }

    /// Log-likelihood of one value given one parameter row.
    pub fn loglk(&self, theta: &[f64], x: f64) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_value(x)?;
        let n = self.norm();
        let l = match self.kind {
            UnitKind::Bernoulli => bernoulli::loglk(x, theta[0]),
            UnitKind::Categorical { .. } => categorical::loglk(x as usize, theta),
            UnitKind::Confounder => normal::standard_loglk(x),
            UnitKind::Ald => ald::loglk(n.normalize(x), theta[0], theta[1], theta[2]) + n.loglk_correction(),
            UnitKind::Flow => {
                let stack = self.wrap(FlowStack::from_theta(theta, self.flow))?;
                self.wrap(stack.loglk(n.normalize(x)))? + n.loglk_correction()
            }
            UnitKind::Normal | UnitKind::Glm => normal::loglk(n.normalize(x), theta[0], theta[1]) + n.loglk_correction(),
        };
        if l.is_nan() {
            return Err(Error::UnitEvaluation {
                node: self.name.clone(),
                detail: "log-likelihood is NaN".into(),
            });
        }
        Ok(l)
    }

    /// Deterministic mechanism: the value produced by noise `noise` under parameters `theta`.
    pub fn sample(&self, theta: &[f64], noise: &Noise) -> Result<f64> {
        self.check_theta(theta)?;
        let n = self.norm();
        let scalar = || {
            noise
                .scalar()
                .ok_or_else(|| Error::Contract(format!("`{}` expects scalar noise", self.name)))
        };
        let x = match self.kind {
            UnitKind::Bernoulli => bernoulli::sample(theta[0], scalar()?),
            UnitKind::Categorical { classes } => match noise {
                Noise::Vector(g) if g.len() == classes => categorical::sample(theta, g),
                _ => return Err(Error::Contract(format!("`{}` expects {classes} Gumbel values", self.name))),
            },
            UnitKind::Confounder => scalar()?,
            UnitKind::Ald => n.denormalize(ald::sample(theta[0], theta[1], theta[2], scalar()?)),
            UnitKind::Flow => {
                let stack = self.wrap(FlowStack::from_theta(theta, self.flow))?;
                n.denormalize(self.wrap(stack.inverse(scalar()?))?)
            }
            UnitKind::Normal | UnitKind::Glm => n.denormalize(normal::sample(theta[0], theta[1], scalar()?)),
        };
        if !x.is_finite() {
            return Err(Error::UnitEvaluation {
                node: self.name.clone(),
                detail: format!("sampled non-finite value {x}"),
            });
        }
        Ok(x)
    }

    /// Posterior over the noise that produced `x` under `theta`.
    pub fn abduct(&self, theta: &[f64], x: f64) -> Result<NoisePosterior> {
        self.check_theta(theta)?;
        self.check_value(x)?;
        let z = self.norm().normalize(x);
        Ok(match self.kind {
            UnitKind::Bernoulli => {
                let (lo, hi) = bernoulli::posterior_interval(x, theta[0]);
                NoisePosterior::Interval { lo, hi }
            }
            UnitKind::Categorical { .. } => NoisePosterior::Rejection {
                logits: theta.to_vec(),
                class: x as usize,
            },
            UnitKind::Confounder => NoisePosterior::Exact(x),
            UnitKind::Ald => NoisePosterior::Exact(ald::abduct(z, theta[0], theta[1], theta[2])),
            UnitKind::Flow => {
                let stack = self.wrap(FlowStack::from_theta(theta, self.flow))?;
                NoisePosterior::Exact(self.wrap(stack.forward(z))?.eps)
            }
            UnitKind::Normal | UnitKind::Glm => NoisePosterior::Exact(normal::abduct(z, theta[0], theta[1])),
        })
    }

    /// A draw from the noise prior.
    pub fn prior_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Noise {
        match self.kind {
            UnitKind::Bernoulli => Noise::Scalar(rng.sample(StandardUniform)),
            UnitKind::Ald => Noise::Scalar(rng.sample(Open01)),
            UnitKind::Categorical { classes } => {
                let gumbel = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
                Noise::Vector((0..classes).map(|_| rng.sample(gumbel)).collect())
            }
            _ => Noise::Scalar(rng.sample(StandardNormal)),
        }
    }

    /// A draw from an abduction posterior, failing if rejection sampling gives up.
    pub fn posterior_noise<R: Rng + ?Sized>(&self, post: &NoisePosterior, rng: &mut R) -> Result<Noise> {
        post.draw(rng).ok_or_else(|| Error::AbductionFailure {
            node: self.name.clone(),
            attempts: REJECTION_CAP,
        })
    }
}
