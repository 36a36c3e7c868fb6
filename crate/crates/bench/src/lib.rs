//! Shared fixtures for the benchmarks.

use wbsr::pipeline::ExperimentConfig;
use wbsr::sensing::{random_matrix, Ensemble};
use wbsr::{BlockStructure, Matrix, WeightSequence};

/// A jointly block-sparse recovery instance `Y = A X`.
pub struct Problem {
    pub a: Matrix,
    pub y: Matrix,
    pub x: Matrix,
    pub structure: BlockStructure,
    pub weights: WeightSequence,
}

/// Gaussian `A` with `blocks` blocks of `size` columns, the first `active`
/// blocks of `X` set to smooth nonzero values and `cols` right-hand sides.
pub fn gaussian_problem(m: usize, blocks: usize, size: usize, active: usize, cols: usize, seed: u64) -> Problem {
    let structure = BlockStructure::uniform(blocks, size).unwrap();
    let a = random_matrix(Ensemble::Gaussian, m, blocks * size, seed).unwrap().into_entries();
    let x = Matrix::from_fn(blocks * size, cols, |i, j| {
        if i < active * size {
            ((i + 1) as f64 * 0.7 + j as f64).sin() + 1.5
        } else {
            0.0
        }
    });
    let y = &a * &x;
    let weights = WeightSequence::new((0..blocks).map(|b| 1.0 + 0.05 * b as f64).collect()).unwrap();
    Problem {
        a,
        y,
        x,
        structure,
        weights,
    }
}

/// The diffusion experiment at sparsity `s` on a mesh with `mesh_n` interior nodes.
pub fn pde_config(s: f64, mesh_n: usize) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&format!(
        r#"
        s = {s:?}
        p = 0.8
        mesh_n = {mesh_n}
        epsilon = 2e-4
        m_test = 50

        [operator]
        mean = 1.0
        amplitude = 0.1
        decay = {{ kind = "algebraic", r = 3.0 }}

        [weights]
        rule = "polynomial"
        c = 1.2
        alpha = 0.5
        "#
    ))
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_valid() {
        let p = gaussian_problem(20, 8, 2, 2, 3, 1);
        assert_eq!(p.y.shape(), (20, 3));
        assert_eq!(p.x.nrows(), p.structure.dim());
        assert_eq!(pde_config(16.0, 31).s, 16.0);
    }
}
