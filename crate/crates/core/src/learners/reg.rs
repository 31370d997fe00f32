use serde::{Deserialize, Serialize};

use super::objective::Penalty;
use crate::error::{ensure_len, Result};
use crate::hypernet::{
    combine, generator_backward, GeneratorParams, GeneratorShape, RepMode, TaskRepresentation,
};

/// Representation of a finished task and the weights generated for it then.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegEntry {
    pub rep: TaskRepresentation,
    pub w_star: Vec<f64>,
}

impl RegEntry {
    pub fn snapshot(rep: &TaskRepresentation, gen: &GeneratorParams) -> Result<Self> {
        Ok(Self {
            rep: rep.clone(),
            w_star: combine(rep, gen, RepMode::Bilevel)?.params.values,
        })
    }
}

/// `λ·Σ_j ‖combine(rep_j, G) − W*_j‖²` on the generated weights.
#[derive(Debug, Clone, Copy)]
pub struct RegPenalty<'a> {
    pub shape: GeneratorShape,
    pub memory: &'a [RegEntry],
    pub lambda: f64,
}

impl Penalty for RegPenalty<'_> {
    fn apply(&self, params: &[f64], grad: &mut [f64]) -> Result<f64> {
        ensure_len(params.len(), grad.len())?;
        if self.memory.is_empty() {
            return Ok(0.0);
        }
        let gen = GeneratorParams::from_values(self.shape, params.to_vec())?;
        let mut value = 0.0;
        for e in self.memory {
            let w = combine(&e.rep, &gen, RepMode::Bilevel)?.params.values;
            ensure_len(w.len(), e.w_star.len())?;
            let dw: Vec<f64> = w
                .iter()
                .zip(&e.w_star)
                .map(|(a, b)| {
                    value += (a - b) * (a - b);
                    2.0 * self.lambda * (a - b)
                })
                .collect();
            generator_backward(e.rep.long.as_slice(), &gen, &dw, grad)?;
            generator_backward(e.rep.short.as_slice(), &gen, &dw, grad)?;
        }
        Ok(self.lambda * value)
    }
}

pub fn bihnet_reg_penalty(
    gen: &GeneratorParams,
    memory: &[RegEntry],
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; gen.values.len()];
    let p = RegPenalty {
        shape: gen.shape,
        memory,
        lambda,
    };
    let value = p.apply(&gen.values, &mut grad)?;
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Embedding;
    use crate::hypernet::GeneratorLayout;
    use crate::neural::{finite_diff_check, NetShape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shape() -> GeneratorShape {
        GeneratorShape {
            target: NetShape::new(4, 3, 1),
            d_z: 4,
            hidden: 5,
        }
    }

    fn gen(seed: u64) -> GeneratorParams {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n = GeneratorLayout::new(shape()).len();
        GeneratorParams::from_values(shape(), (0..n).map(|_| r.gen_range(-0.5..0.5)).collect())
            .unwrap()
    }

    fn rep() -> TaskRepresentation {
        TaskRepresentation {
            task_id: "t".into(),
            long: Embedding(vec![0.3, -0.2, 0.5, 0.1]),
            short: Embedding(vec![0.1, 0.4, -0.25, 0.2]),
        }
    }

    #[test]
    fn zero_when_unchanged_or_empty() {
        let g = gen(0);
        let memory = [RegEntry::snapshot(&rep(), &g).unwrap()];
        let (v, grad) = bihnet_reg_penalty(&g, &memory, 0.01).unwrap();
        assert_eq!(v, 0.0);
        assert!(grad.iter().all(|&x| x == 0.0));
        let (v, grad) = bihnet_reg_penalty(&gen(1), &[], 0.01).unwrap();
        assert_eq!(v, 0.0);
        assert!(grad.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let memory = [RegEntry::snapshot(&rep(), &gen(0)).unwrap()];
        let g = gen(1);
        let (v, grad) = bihnet_reg_penalty(&g, &memory, 0.01).unwrap();
        assert!(v > 0.0);
        let err = finite_diff_check(
            |p| {
                let g = GeneratorParams::from_values(shape(), p.to_vec()).unwrap();
                bihnet_reg_penalty(&g, &memory, 0.01).unwrap().0
            },
            &grad,
            &g.values,
            usize::MAX,
            1e-6,
            0,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
