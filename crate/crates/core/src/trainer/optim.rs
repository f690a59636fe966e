use super::OptimizerKind;
use crate::layers::{blocks, num_params, Params};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Optimizer state over the flattened parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub kind: OptimizerKind,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimState {
    pub fn new<P: Params<f64>>(kind: OptimizerKind, params: &P) -> Self {
        let n = match kind {
            OptimizerKind::Adam => num_params(params),
            OptimizerKind::Sgd => 0,
        };
        Self { kind, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// One update. Blocks for which `frozen(name)` holds are left untouched,
    /// moments included.
    pub fn step<P: Params<f64>>(&mut self, params: &mut P, grad: &P, lr: f64, frozen: &dyn Fn(&str) -> bool) {
        self.step += 1;
        let grads: Vec<(String, Vec<f64>)> = blocks(grad).into_iter().map(|(n, d)| (n, d.to_vec())).collect();
        let bc1 = 1.0 - BETA1.powf(self.step as f64);
        let bc2 = 1.0 - BETA2.powf(self.step as f64);
        let mut block = 0;
        let mut offset = 0;
        let (kind, m, v) = (self.kind, &mut self.m, &mut self.v);
        params.visit_mut("", &mut |name, data| {
            let (gname, g) = &grads[block];
            debug_assert_eq!(&name, gname);
            block += 1;
            let start = offset;
            offset += data.len();
            if frozen(&name) {
                return;
            }
            match kind {
                OptimizerKind::Sgd => {
                    for (p, g) in data.iter_mut().zip(g) {
                        *p -= lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    for (i, (p, &g)) in data.iter_mut().zip(g).enumerate() {
                        let k = start + i;
                        m[k] = BETA1 * m[k] + (1.0 - BETA1) * g;
                        v[k] = BETA2 * v[k] + (1.0 - BETA2) * g * g;
                        *p -= lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + EPS);
                    }
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut x: Array1<f64> = array![3.0, -2.0];
        let mut opt = OptimState::new(OptimizerKind::Adam, &x);
        for _ in 0..3000 {
            let g = &x * 2.0;
            opt.step(&mut x, &g, 0.01, &|_| false);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-3), "{x}");
    }

    #[test]
    fn zero_rate_and_frozen_blocks_do_not_move() {
        let start: Array1<f64> = array![1.0, 2.0];
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let mut x = start.clone();
            let mut opt = OptimState::new(kind, &x);
            opt.step(&mut x, &array![5.0, -5.0], 0.0, &|_| false);
            assert_eq!(x, start);
            opt.step(&mut x, &array![5.0, -5.0], 0.1, &|_| true);
            assert_eq!(x, start);
        }
        let mut x = start.clone();
        let mut sgd = OptimState::new(OptimizerKind::Sgd, &x);
        sgd.step(&mut x, &array![1.0, 1.0], 0.5, &|_| false);
        assert_eq!(x, array![0.5, 1.5]);
    }
}
