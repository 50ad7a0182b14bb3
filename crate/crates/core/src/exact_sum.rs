/// Exactly rounded floating-point summation (Shewchuk's non-overlapping
/// partials). The result does not depend on the order values were added in,
/// which keeps parallel ensemble reductions bit-reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    /// The correctly rounded value of the sum.
    pub fn value(&self) -> f64 {
        let mut n = self.partials.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = self.partials[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = self.partials[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // Round-half-even correction across the last two partials.
        if n > 0 && ((lo < 0.0 && self.partials[n - 1] < 0.0) || (lo > 0.0 && self.partials[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_independent() {
        let values = [1e16, 1.0, -1e16, 0.5, 1e-30, -1e-30];
        let mut fwd = ExactSum::default();
        values.iter().for_each(|&v| fwd.add(v));
        let mut rev = ExactSum::default();
        values.iter().rev().for_each(|&v| rev.add(v));
        assert_eq!(fwd.value(), rev.value());
        assert_eq!(fwd.value(), 1.5);
    }

    #[test]
    fn merge_matches_sequential() {
        let mut a = ExactSum::default();
        let mut b = ExactSum::default();
        let mut all = ExactSum::default();
        for i in 0..100 {
            let v = (i as f64 * 0.37).sin() * 10f64.powi(i % 7);
            if i % 3 == 0 { a.add(v) } else { b.add(v) }
            all.add(v);
        }
        a.merge(&b);
        assert_eq!(a.value(), all.value());
    }
}
