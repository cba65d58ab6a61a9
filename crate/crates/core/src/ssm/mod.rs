//! Linear state-space models with diagonal state matrices.
//!
//! Continuous dynamics `h' = A h + B x`, `y = C h` are discretized with a
//! zero-order hold:
//!
//! ```text
//! Abar = exp(delta A)
//! Bbar = (delta A)^-1 (exp(delta A) - 1) delta B
//! ```
//!
//! and then evaluated either as a recurrence or, for time-invariant systems,
//! as a causal convolution with the kernel `K_i = <C, Abar^i Bbar>`.
//! [`selective`] holds the input-dependent variant and [`cross`] the four
//! spatial traversal orders used by SS2D.

pub mod cross;
pub mod selective;

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tensor::Real;
use crate::{config_err, shape_err, Error, Result};

pub use cross::{cross_merge, cross_scan, Direction};
pub use selective::{selective_scan, SelectiveParams};

/// Below this `|delta a|` the ZOH input factor switches to its Taylor series.
pub const SERIES_THRESHOLD: f64 = 1e-4;

/// `(e^z - 1) / z`, the ZOH input factor.
#[inline]
pub fn zoh_input_factor<T: Real>(z: T) -> T {
    if z.abs().as_f64() < SERIES_THRESHOLD {
        // 1 + z/2 + z^2/6; truncation error ~ z^3/24 stays below 1e-13 here
        T::one() + z * (T::from_f64(0.5) + z / T::from_f64(6.0))
    } else {
        z.exp_m1() / z
    }
}

/// Zero-order-hold discretization of a diagonal system.
///
/// Returns `(Abar, Bbar)` elementwise.
pub fn discretize<T: Real>(a: &[T], b: &[T], delta: T) -> Result<(Vec<T>, Vec<T>)> {
    if delta.is_nan() || delta <= T::zero() {
        return Err(config_err!("timescale must be positive, got {delta}"));
    }
    if a.len() != b.len() {
        return Err(shape_err!("A has {} entries but B has {}", a.len(), b.len()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&ai, &bi)| {
            let z = delta * ai;
            (z.exp(), zoh_input_factor(z) * delta * bi)
        })
        .unzip())
}

/// A state-space quantity that is either fixed or given per time step.
#[derive(Clone, Debug, PartialEq)]
pub enum Stepwise<T> {
    Shared(T),
    PerStep(Vec<T>),
}

impl<T> Stepwise<T> {
    fn at(&self, t: usize) -> &T {
        match self {
            Stepwise::Shared(v) => v,
            Stepwise::PerStep(v) => &v[t],
        }
    }

    fn steps(&self) -> Option<usize> {
        match self {
            Stepwise::Shared(_) => None,
            Stepwise::PerStep(v) => Some(v.len()),
        }
    }
}

/// Parameters of a single-channel SSM with state dimension `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams<T> {
    /// Diagonal of the state matrix, length `N`.
    pub a: Vec<T>,
    pub b: Stepwise<Vec<T>>,
    pub c: Stepwise<Vec<T>>,
    pub delta: Stepwise<T>,
}

impl<T: Real> SsmParams<T> {
    pub fn time_invariant(a: Vec<T>, b: Vec<T>, c: Vec<T>, delta: T) -> Result<Self> {
        let p = SsmParams { a, b: Stepwise::Shared(b), c: Stepwise::Shared(c), delta: Stepwise::Shared(delta) };
        p.validate(None)?;
        Ok(p)
    }

    pub fn state_dim(&self) -> usize {
        self.a.len()
    }

    pub fn is_time_invariant(&self) -> bool {
        self.b.steps().is_none() && self.c.steps().is_none() && self.delta.steps().is_none()
    }

    fn validate(&self, len: Option<usize>) -> Result<()> {
        let n = self.a.len();
        if n == 0 {
            return Err(config_err!("state dimension must be at least 1"));
        }
        for (name, param) in [("B", &self.b), ("C", &self.c)] {
            let bad = match param {
                Stepwise::Shared(v) => (v.len() != n).then_some(v.len()),
                Stepwise::PerStep(vs) => vs.iter().map(Vec::len).find(|&l| l != n),
            };
            if let Some(got) = bad {
                return Err(shape_err!("{name} has {got} entries, state dimension is {n}"));
            }
        }
        if let Some(len) = len {
            for steps in [self.b.steps(), self.c.steps(), self.delta.steps()].into_iter().flatten() {
                if steps != len {
                    return Err(shape_err!("per-step parameters cover {steps} steps, input has {len}"));
                }
            }
        }
        Ok(())
    }
}

/// Recurrent evaluation from a zero state:
/// `h_t = Abar h_{t-1} + Bbar x_t`, `y_t = <C, h_t>`.
pub fn scan_recurrent<T: Real>(params: &SsmParams<T>, x: &[T]) -> Result<Vec<T>> {
    params.validate(Some(x.len()))?;
    let n = params.state_dim();
    let mut h = vec![T::zero(); n];
    let mut shared = None;
    if let (Stepwise::Shared(b), Stepwise::Shared(d)) = (&params.b, &params.delta) {
        shared = Some(discretize(&params.a, b, *d)?);
    }
    let mut y = Vec::with_capacity(x.len());
    for (t, &xt) in x.iter().enumerate() {
        let step;
        let (abar, bbar) = match &shared {
            Some(s) => (&s.0, &s.1),
            None => {
                step = discretize(&params.a, params.b.at(t), *params.delta.at(t))
                    .map_err(|e| Error::Numeric { step: t, what: alloc::format!("{e}") })?;
                (&step.0, &step.1)
            }
        };
        let c = params.c.at(t);
        let mut yt = T::zero();
        for i in 0..n {
            h[i] = abar[i] * h[i] + bbar[i] * xt;
            yt += c[i] * h[i];
        }
        y.push(yt);
    }
    Ok(y)
}

/// SSM convolution kernel `K_i = <C, Abar^i ⊙ Bbar>` for `i < len`.
pub fn scan_conv_kernel<T: Real>(params: &SsmParams<T>, len: usize) -> Result<Vec<T>> {
    let (Stepwise::Shared(b), Stepwise::Shared(c), Stepwise::Shared(delta)) =
        (&params.b, &params.c, &params.delta)
    else {
        return Err(config_err!("the convolution form needs time-invariant B, C and delta"));
    };
    params.validate(None)?;
    let (abar, bbar) = discretize(&params.a, b, *delta)?;
    let mut power = bbar;
    let mut kernel = Vec::with_capacity(len);
    for _ in 0..len {
        kernel.push(c.iter().zip(&power).map(|(&ci, &pi)| ci * pi).sum());
        power.iter_mut().zip(&abar).for_each(|(p, &a)| *p *= a);
    }
    Ok(kernel)
}

/// Causal 1-D convolution `y_t = sum_{i <= t} K_i x_{t-i}`.
pub fn causal_conv1d<T: Real>(kernel: &[T], x: &[T]) -> Result<Vec<T>> {
    if kernel.len() < x.len() {
        return Err(shape_err!("kernel of length {} is shorter than input {}", kernel.len(), x.len()));
    }
    Ok((0..x.len())
        .map(|t| (0..=t).map(|i| kernel[i] * x[t - i]).sum())
        .collect())
}

/// Kernel-form evaluation; equals [`scan_recurrent`] for time-invariant systems.
pub fn scan_kernel_form<T: Real>(params: &SsmParams<T>, x: &[T]) -> Result<Vec<T>> {
    let k = scan_conv_kernel(params, x.len())?;
    causal_conv1d(&k, x)
}

/// Shape of the SS2D selective-scan core.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ss2dConfig {
    /// Width the scans run at (the compressed width inside a bottleneck).
    pub channels: usize,
    pub state_dim: usize,
    pub dt_rank: usize,
}

impl Ss2dConfig {
    pub const DIRECTIONS: usize = 4;

    pub fn new(channels: usize, state_dim: usize, dt_rank: Option<usize>) -> Result<Self> {
        if channels == 0 || state_dim == 0 {
            return Err(config_err!("SS2D needs positive channels and state dim, got {channels}/{state_dim}"));
        }
        let dt_rank = dt_rank.unwrap_or_else(|| default_dt_rank(channels));
        if dt_rank == 0 {
            return Err(config_err!("dt_rank must be positive"));
        }
        Ok(Ss2dConfig { channels, state_dim, dt_rank })
    }

    /// Rows of the per-direction projection producing `(dt_low, B, C)`.
    pub fn proj_rows(&self) -> usize {
        self.dt_rank + 2 * self.state_dim
    }
}

pub fn default_dt_rank(channels: usize) -> usize {
    channels.div_ceil(16)
}
