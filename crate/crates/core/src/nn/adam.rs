use super::{Param, Real};

/// Adam with bias correction and no weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Number of completed steps.
    pub step: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(learning_rate: f64, params: &[Param<T>]) -> Self {
        let zeros: Vec<Vec<T>> = params.iter().map(|p| vec![T::zero(); p.data.len()]).collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn update(&mut self, params: &mut [Param<T>], grads: &[Vec<T>]) {
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::one() - T::lit(self.beta1.powi(t));
        let c2 = T::one() - T::lit(self.beta2.powi(t));
        let lr = T::lit(self.learning_rate);
        let eps = T::lit(self.epsilon);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for (((w, &g), m), v) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut params = vec![Param {
            name: "x".into(),
            dims: vec![2],
            data: vec![3.0f64, -2.0],
        }];
        let mut adam = Adam::new(0.05, &params);
        for _ in 0..2000 {
            let g: Vec<f64> = params[0].data.iter().map(|x| 2.0 * (x - 1.0)).collect();
            adam.update(&mut params, &[g]);
        }
        for x in &params[0].data {
            assert!((x - 1.0).abs() < 1e-3);
        }
        assert_eq!(adam.step, 2000);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Param {
            name: "x".into(),
            dims: vec![3],
            data: vec![0.5f32, -1.0, 2.0],
        }];
        let before = params.clone();
        let mut adam = Adam::new(1e-3, &params);
        adam.update(&mut params, &[vec![0.0; 3]]);
        assert_eq!(params, before);
    }
}
