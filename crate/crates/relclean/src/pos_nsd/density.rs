use crate::error::{Error, Result};

/// Dense symmetric matrix of squared Euclidean distances within one class.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub class: usize,
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Pairwise squared distances. The upper triangle is computed once and
/// mirrored, so the result is exactly symmetric with a zero diagonal.
pub fn distance_matrix<V: AsRef<[f64]>>(class: usize, features: &[V]) -> Result<DistanceMatrix> {
    let n = features.len();
    if let Some(first) = features.first() {
        let dim = first.as_ref().len();
        if let Some((i, f)) = features
            .iter()
            .enumerate()
            .find(|(_, f)| f.as_ref().len() != dim)
        {
            return Err(Error::DimensionMismatch {
                line: i + 1,
                expected: dim,
                found: f.as_ref().len(),
            });
        }
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        let a = features[i].as_ref();
        for j in i + 1..n {
            let d = squared_euclidean(a, features[j].as_ref());
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { class, n, values })
}

/// Cutoff distance at percentile `alpha`: the entry at 1-based rank
/// `ceil(alpha / 100 * M)` of the ascending pool of `M` distances. The pool
/// holds all `N × N` entries, or only the off-diagonal ones when
/// `include_self` is false.
pub fn cutoff_distance(matrix: &DistanceMatrix, alpha: f64, include_self: bool) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 100.0) {
        return Err(Error::InvalidConfig(format!("percentile {alpha} outside (0, 100]")));
    }
    let n = matrix.n;
    let mut pool: Vec<f64> = if include_self {
        matrix.values.clone()
    } else {
        (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| matrix.get(i, j))
            .collect()
    };
    if pool.is_empty() {
        return Ok(0.0);
    }
    pool.sort_by(f64::total_cmp);
    Ok(pool[percentile_rank(alpha, pool.len()) - 1])
}

/// `ceil(alpha / 100 * m)` clamped to `1..=m`, tolerant of the rounding error
/// in `alpha * m / 100`.
pub(crate) fn percentile_rank(alpha: f64, m: usize) -> usize {
    let exact = alpha * m as f64 / 100.0;
    let rounded = exact.round();
    let rank = if (exact - rounded).abs() <= 1e-9 * exact.max(1.0) {
        rounded
    } else {
        exact.ceil()
    };
    (rank as usize).clamp(1, m)
}

/// `ρ_i = #{ j : d_c - d_ij > 0 }`, optionally skipping `j = i`.
pub fn local_density(matrix: &DistanceMatrix, cutoff: f64, include_self: bool) -> Vec<u32> {
    (0..matrix.n)
        .map(|i| {
            matrix
                .row(i)
                .iter()
                .enumerate()
                .filter(|&(j, &d)| (include_self || j != i) && cutoff - d > 0.0)
                .count() as u32
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_matrix() -> DistanceMatrix {
        distance_matrix(0, &[vec![0.0], vec![1.0], vec![10.0]]).unwrap()
    }

    #[test]
    fn one_dimensional_example() {
        let m = line_matrix();
        assert_eq!(m.values(), [0.0, 1.0, 100.0, 1.0, 0.0, 81.0, 100.0, 81.0, 0.0]);
    }

    #[test]
    fn single_sample_and_identical_vectors() {
        let m = distance_matrix(0, &[vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.values(), [0.0]);
        let m = distance_matrix(0, &[vec![3.0, 4.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.values(), [0.0; 4]);
    }

    #[test]
    fn rejects_ragged_features() {
        assert!(distance_matrix(0, &[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn cutoff_examples() {
        let m = line_matrix();
        assert_eq!(cutoff_distance(&m, 50.0, true).unwrap(), 1.0);
        assert_eq!(cutoff_distance(&m, 100.0, true).unwrap(), 100.0);
        let single = distance_matrix(0, &[vec![7.0]]).unwrap();
        assert_eq!(cutoff_distance(&single, 12.5, true).unwrap(), 0.0);
        assert_eq!(cutoff_distance(&single, 12.5, false).unwrap(), 0.0);
        assert!(cutoff_distance(&m, 0.0, true).is_err());
        assert!(cutoff_distance(&m, 100.5, true).is_err());
    }

    #[test]
    fn cutoff_without_diagonal() {
        // off-diagonal pool [1,1,81,81,100,100]; rank ceil(3) = 3
        assert_eq!(cutoff_distance(&line_matrix(), 50.0, false).unwrap(), 81.0);
    }

    #[test]
    fn percentile_rank_is_robust_to_float_noise() {
        assert_eq!(percentile_rank(12.5, 64), 8);
        assert_eq!(percentile_rank(50.0, 9), 5);
        assert_eq!(percentile_rank(0.1, 3), 1);
        assert_eq!(percentile_rank(100.0, 1600), 1600);
        assert_eq!(percentile_rank(33.3, 1000), 333);
    }

    #[test]
    fn density_examples() {
        let m = line_matrix();
        assert_eq!(local_density(&m, 2.0, true), [2, 2, 1]);
        assert_eq!(local_density(&m, 0.0, true), [0, 0, 0]);
        assert_eq!(local_density(&m, 100.5, true), [3, 3, 3]);
        assert_eq!(local_density(&m, 2.0, false), [1, 1, 0]);
    }
}
