//! Seven-frame decoder queries built from the four deepest encoder features.

use rstt_tensor::{Float, Graph, MixRow, Var};

use crate::error::{config_err, Result};

/// How each query frame mixes the four encoder frames, and where it sits in
/// time, counted in half input-frame steps from the first input.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryPlan {
    pub rows: Vec<MixRow>,
    pub offsets: Vec<isize>,
}

impl QueryPlan {
    /// Anchors copy inputs 0..3 at output slots 0, 2, 4, 6; the slots in
    /// between average their two neighbours.
    pub fn standard() -> Self {
        Self::subdivided(2).expect("n = 2 is valid")
    }

    /// Every gap between adjacent inputs split into `n` equal steps; `3n + 1`
    /// frames in total.
    pub fn subdivided(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(config_err(format!("subdivisions must be at least 2, got {n}")));
        }
        let fractions: Vec<f64> = (1..n).map(|i| i as f64 / n as f64).collect();
        Self::fractions(&fractions)
    }

    /// Anchors interleaved with one query per fraction in every gap. A
    /// fraction `f` in gap `k` is `(1 - f) E[k] + f E[k + 1]`.
    pub fn fractions(fractions: &[f64]) -> Result<Self> {
        if let Some(bad) = fractions.iter().find(|f| !(f.is_finite() && **f > 0.0 && **f < 1.0)) {
            return Err(config_err(format!("query fraction {bad} is outside (0, 1)")));
        }
        if fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config_err("query fractions must be strictly increasing"));
        }
        let mut plan = QueryPlan { rows: Vec::new(), offsets: Vec::new() };
        for k in 0..4 {
            plan.rows.push(vec![(k, 1.0)]);
            plan.offsets.push(2 * k as isize);
            if k == 3 {
                break;
            }
            for &f in fractions {
                plan.rows.push(vec![(k, 1.0 - f), (k + 1, f)]);
                plan.offsets.push(2 * k as isize + (2.0 * f).round() as isize);
            }
        }
        Ok(plan)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Apply to `[4, ...]` features, giving `[len, ...]`.
    pub fn apply<T: Float>(&self, g: &Graph<T>, e3: &Var<T>) -> Result<Var<T>> {
        Ok(g.frame_mix(e3, &self.rows)?)
    }
}

/// `Q[0, 2, 4, 6] = E3[0, 1, 2, 3]`; odd slots are means of the neighbours.
pub fn build_query<T: Float>(g: &Graph<T>, e3: &Var<T>) -> Result<Var<T>> {
    QueryPlan::standard().apply(g, e3)
}

/// Queries at `i / n` of each gap for `i = 1..n`, interleaved with anchors.
pub fn build_query_arbitrary<T: Float>(g: &Graph<T>, e3: &Var<T>, n: usize) -> Result<Var<T>> {
    QueryPlan::subdivided(n)?.apply(g, e3)
}

/// Queries at the given fractions of each gap, interleaved with anchors.
pub fn build_query_fractions<T: Float>(g: &Graph<T>, e3: &Var<T>, fractions: &[f64]) -> Result<Var<T>> {
    QueryPlan::fractions(fractions)?.apply(g, e3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_plan_has_seven_slots() {
        let p = QueryPlan::standard();
        assert_eq!(p.len(), 7);
        assert_eq!(p.offsets, vec![0, 1, 2, 3, 4, 5, 6]);
        assert_eq!(p.rows[3], vec![(1, 0.5), (2, 0.5)]);
    }

    #[test]
    fn bad_fractions_are_rejected() {
        assert!(QueryPlan::fractions(&[0.0]).is_err());
        assert!(QueryPlan::fractions(&[1.0]).is_err());
        assert!(QueryPlan::fractions(&[0.6, 0.3]).is_err());
        assert!(QueryPlan::subdivided(1).is_err());
    }

    #[test]
    fn subdivision_counts() {
        assert_eq!(QueryPlan::subdivided(4).unwrap().len(), 13);
    }
}
