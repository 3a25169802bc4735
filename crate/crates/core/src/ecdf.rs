use crate::error::{input, Result};

/// Right-continuous empirical CDF of `m` points in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EcdfCurve {
    sorted: Vec<f64>,
}

impl EcdfCurve {
    pub fn new(values: &[f64]) -> Result<Self> {
        Self::from_vec(values.to_vec())
    }

    pub fn from_vec(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return input("empirical CDF needs at least one point");
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return input(format!("empirical CDF point {bad} outside [0, 1]"));
        }
        values.sort_unstable_by(f64::total_cmp);
        Ok(Self { sorted: values })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted
    }

    /// Number of points `<= t`.
    pub fn count_le(&self, t: f64) -> usize {
        self.sorted.partition_point(|&v| v <= t)
    }

    /// Number of points `< t`.
    pub fn count_lt(&self, t: f64) -> usize {
        self.sorted.partition_point(|&v| v < t)
    }

    /// `F(t) = #{values <= t} / m`.
    pub fn eval(&self, t: f64) -> f64 {
        self.count_le(t) as f64 / self.len() as f64
    }

    /// Left limit `F(t-) = #{values < t} / m`.
    pub fn eval_left(&self, t: f64) -> f64 {
        self.count_lt(t) as f64 / self.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn right_continuous_steps() {
        let f = EcdfCurve::new(&[0.6, 0.2]).unwrap();
        assert_eq!(f.eval(0.0), 0.0);
        assert_eq!(f.eval(0.2), 0.5);
        assert_eq!(f.eval_left(0.2), 0.0);
        assert_eq!(f.eval(0.5), 0.5);
        assert_eq!(f.eval(1.0), 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(EcdfCurve::new(&[]).is_err());
        assert!(EcdfCurve::new(&[1.5]).is_err());
        assert!(EcdfCurve::new(&[f64::NAN]).is_err());
    }
}
