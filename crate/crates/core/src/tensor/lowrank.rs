use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::algebra::{Eager, TensorAlgebra};
use super::dense::DenseTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Dense,
    Cp,
    #[default]
    Tucker,
    Tt,
}

/// Shape and rank layout of a weight tensor over `input_shape ++ output_shape`.
///
/// Factor lists per structure:
/// - dense: `[W]`
/// - Tucker: `[core, U_1, ..., U_M]`, `U_m` of shape `(D_m, R_m)`
/// - CP: `[lambda, U_1, ..., U_M]`, `U_m` of shape `(D_m, R)`
/// - TT: `[G_1, ..., G_M]`, `G_m` of shape `(r_{m-1}, D_m, r_m)`, `r_0 = r_M = 1`
///
/// `ranks` holds the per-mode Tucker ranks, the single CP rank, or the
/// `M - 1` inner TT bond dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankSpec {
    pub structure: Structure,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub ranks: Vec<usize>,
}

fn half_up(d: usize) -> usize {
    d.div_ceil(2).max(1)
}

impl LowRankSpec {
    /// Builds a spec, filling in half-size ranks when `ranks` is `None`.
    pub fn new(
        structure: Structure,
        input_shape: &[usize],
        output_shape: &[usize],
        ranks: Option<Vec<usize>>,
    ) -> Result<Self> {
        let mut spec = Self {
            structure,
            input_shape: input_shape.to_vec(),
            output_shape: output_shape.to_vec(),
            ranks: Vec::new(),
        };
        let modes = spec.modes();
        spec.ranks = match ranks {
            Some(r) => r,
            None => match structure {
                Structure::Dense => Vec::new(),
                Structure::Tucker => modes.iter().map(|&d| half_up(d)).collect(),
                Structure::Cp => vec![modes.iter().map(|&d| half_up(d)).max().unwrap_or(1)],
                Structure::Tt => modes.windows(2).map(|w| half_up(w[0].max(w[1]))).collect(),
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let modes = self.modes();
        if self.input_shape.is_empty() || self.output_shape.is_empty() {
            return Err(Error::contract("weight needs at least one input and one output mode"));
        }
        if modes.contains(&0) || self.ranks.contains(&0) {
            return Err(Error::contract(format!(
                "zero-sized mode or rank in {modes:?} / {:?}",
                self.ranks
            )));
        }
        let expected = match self.structure {
            Structure::Dense => 0,
            Structure::Tucker => modes.len(),
            Structure::Cp => 1,
            Structure::Tt => modes.len() - 1,
        };
        if self.ranks.len() != expected {
            return Err(Error::contract(format!(
                "{:?} weight over {} modes needs {expected} ranks, got {}",
                self.structure,
                modes.len(),
                self.ranks.len()
            )));
        }
        Ok(())
    }

    /// All modes of the weight: inputs then outputs.
    pub fn modes(&self) -> Vec<usize> {
        self.input_shape.iter().chain(&self.output_shape).copied().collect()
    }

    pub fn factor_shapes(&self) -> Vec<Vec<usize>> {
        let modes = self.modes();
        match self.structure {
            Structure::Dense => vec![modes],
            Structure::Tucker => std::iter::once(self.ranks.clone())
                .chain(modes.iter().zip(&self.ranks).map(|(&d, &r)| vec![d, r]))
                .collect(),
            Structure::Cp => {
                let r = self.ranks[0];
                std::iter::once(vec![r]).chain(modes.iter().map(|&d| vec![d, r])).collect()
            }
            Structure::Tt => {
                let bonds: Vec<usize> = std::iter::once(1).chain(self.ranks.iter().copied()).chain([1]).collect();
                modes.iter().enumerate().map(|(m, &d)| vec![bonds[m], d, bonds[m + 1]]).collect()
            }
        }
    }

    pub fn factor_names(&self) -> Vec<String> {
        let n = self.modes().len();
        let loadings = |head: &str| std::iter::once(head.to_string()).chain((0..n).map(|m| format!("u{m}"))).collect();
        match self.structure {
            Structure::Dense => vec!["w".into()],
            Structure::Tucker => loadings("core"),
            Structure::Cp => loadings("lambda"),
            Structure::Tt => (0..n).map(|m| format!("g{m}")).collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.factor_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    pub fn dense_parameter_count(&self) -> usize {
        self.modes().iter().product()
    }

    fn check_factors<A: TensorAlgebra>(&self, alg: &A, factors: &[A::T]) -> Result<()> {
        let shapes = self.factor_shapes();
        if factors.len() != shapes.len() {
            return Err(Error::contract(format!(
                "{:?} weight expects {} factors, got {}",
                self.structure,
                shapes.len(),
                factors.len()
            )));
        }
        for (i, (f, s)) in factors.iter().zip(&shapes).enumerate() {
            let actual = alg.shape_of(f);
            if &actual != s {
                return Err(Error::contract(format!("factor {i} has shape {actual:?}, expected {s:?}")));
            }
        }
        Ok(())
    }

    /// Contracts the trailing `input_shape` modes of `x` with the weight,
    /// factor by factor. Leading modes of `x` are treated as a batch.
    pub fn contract<A: TensorAlgebra>(&self, alg: &mut A, factors: &[A::T], x: &A::T) -> Result<A::T> {
        self.check_factors(alg, factors)?;
        let shape = alg.shape_of(x);
        if !shape.ends_with(&self.input_shape) {
            return Err(Error::shape(format!(
                "input of shape {shape:?} does not end with the weight's input modes {:?}",
                self.input_shape
            )));
        }
        let batch_modes = &shape[..shape.len() - self.input_shape.len()];
        let b: usize = batch_modes.iter().product();
        let m_in = self.input_shape.len();
        let m_out = self.output_shape.len();
        let in_size: usize = self.input_shape.iter().product();
        let out_size: usize = self.output_shape.iter().product();

        let flat = match self.structure {
            Structure::Dense => {
                let xm = alg.reshape(x, &[b, in_size])?;
                let w = alg.reshape(&factors[0], &[in_size, out_size])?;
                alg.tensordot(&xm, &w, &[1], &[0])?
            }
            Structure::Tucker => {
                // Each step contracts the leading non-batch mode and appends
                // the matching rank mode, so the mode order is preserved.
                let mut z = alg.reshape(x, &[&[b][..], &self.input_shape].concat())?;
                for u in &factors[1..=m_in] {
                    z = alg.tensordot(&z, u, &[1], &[0])?;
                }
                let core_axes: Vec<usize> = (0..m_in).collect();
                let z_axes: Vec<usize> = (1..=m_in).collect();
                z = alg.tensordot(&z, &factors[0], &z_axes, &core_axes)?;
                for u in &factors[m_in + 1..] {
                    z = alg.tensordot(&z, u, &[1], &[1])?;
                }
                alg.reshape(&z, &[b, out_size])?
            }
            Structure::Cp => {
                let xm = alg.reshape(x, &[b, in_size])?;
                let kr_in = alg.khatri_rao(&factors[1..=m_in])?;
                let z = alg.tensordot(&xm, &kr_in, &[1], &[0])?;
                let z = alg.scale_last_axis(&z, &factors[0])?;
                let kr_out = alg.khatri_rao(&factors[m_in + 1..])?;
                alg.matmul_nt(&z, &kr_out)?
            }
            Structure::Tt => {
                let mut z = alg.reshape(x, &[&[b][..], &self.input_shape, &[1]].concat())?;
                for (m, g) in factors[..m_in].iter().enumerate() {
                    let last = m_in - m + 1;
                    z = alg.tensordot(&z, g, &[1, last], &[1, 0])?;
                }
                for (k, g) in factors[m_in..].iter().enumerate() {
                    z = alg.tensordot(&z, g, &[k + 1], &[0])?;
                }
                alg.reshape(&z, &[b, out_size])?
            }
        };
        debug_assert_eq!(m_out, self.output_shape.len());
        alg.reshape(&flat, &[batch_modes, &self.output_shape[..]].concat())
    }

    /// Random factors whose composed weight has entry variance close to
    /// `2 / (fan_in + fan_out)`.
    pub fn init_factors<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<DenseTensor> {
        let fan_in: usize = self.input_shape.iter().product();
        let fan_out: usize = self.output_shape.iter().product();
        let target = 2.0 / (fan_in + fan_out) as f64;
        let shapes = self.factor_shapes();
        let mut gaussian = |shape: &[usize], var: f64| {
            let normal = Normal::new(0.0, var.sqrt()).expect("positive variance");
            let n = shape.iter().product();
            DenseTensor::from_vec(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect())
                .expect("consistent shape")
        };
        match self.structure {
            Structure::Dense => vec![gaussian(&shapes[0], target)],
            Structure::Tucker => {
                let mut out = vec![gaussian(&shapes[0], target)];
                out.extend(shapes[1..].iter().map(|s| gaussian(s, 1.0 / s[1] as f64)));
                out
            }
            Structure::Cp => {
                let r = self.ranks[0];
                let mut out = vec![DenseTensor::filled(&[r], (target / r as f64).sqrt())];
                out.extend(shapes[1..].iter().map(|s| gaussian(s, 1.0)));
                out
            }
            Structure::Tt => {
                let last = shapes.len() - 1;
                shapes
                    .iter()
                    .enumerate()
                    .map(|(m, s)| gaussian(s, if m == last { target } else { 1.0 / s[2] as f64 }))
                    .collect()
            }
        }
    }
}

/// A low-rank weight with concrete factor values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankWeight {
    pub spec: LowRankSpec,
    pub factors: Vec<DenseTensor>,
}

impl LowRankWeight {
    pub fn new(spec: LowRankSpec, factors: Vec<DenseTensor>) -> Result<Self> {
        spec.check_factors(&Eager, &factors)?;
        Ok(Self { spec, factors })
    }

    pub fn random<R: Rng + ?Sized>(spec: LowRankSpec, rng: &mut R) -> Self {
        let factors = spec.init_factors(rng);
        Self { spec, factors }
    }

    pub fn parameter_count(&self) -> usize {
        self.spec.parameter_count()
    }

    pub fn contract(&self, x: &DenseTensor) -> Result<DenseTensor> {
        self.spec.contract(&mut Eager, &self.factors, x)
    }

    /// The full weight tensor over `input_shape ++ output_shape`.
    pub fn materialize(&self) -> Result<DenseTensor> {
        self.spec.check_factors(&Eager, &self.factors)?;
        let modes = self.spec.modes();
        let f = &self.factors;
        match self.spec.structure {
            Structure::Dense => Ok(f[0].clone()),
            Structure::Tucker => {
                let mut t = f[0].clone();
                for u in &f[1..] {
                    t = t.tensordot(u, &[0], &[1])?;
                }
                Ok(t)
            }
            Structure::Cp => {
                let kr = DenseTensor::khatri_rao(&f[1..].iter().collect::<Vec<_>>())?;
                let r = self.spec.ranks[0];
                kr.matmul(&f[0].reshape(&[r, 1])?)?.into_reshaped(&modes)
            }
            Structure::Tt => {
                let mut t = f[0].clone();
                for g in &f[1..] {
                    let last = t.ndim() - 1;
                    t = t.tensordot(g, &[last], &[0])?;
                }
                t.into_reshaped(&modes)
            }
        }
    }
}
