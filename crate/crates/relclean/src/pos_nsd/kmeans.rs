//! Lloyd's 1-D k-means over local densities.

const MAX_ITERATIONS: usize = 1000;

/// Result of splitting one class by density.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSplit {
    /// Subset index per sample; subsets are numbered by ascending centroid.
    pub assignments: Vec<usize>,
    pub centroids: Vec<f64>,
    /// Subset with the lowest mean density.
    pub noisy_subset: usize,
}

/// Clusters `densities` into at most `n_subsets` groups.
///
/// Centroids start at evenly spaced quantiles of the sorted densities
/// (positions `(i + 0.5) / k`); duplicate starting values collapse, so fewer
/// than `n_subsets` groups may come back. Returns `None` when fewer than two
/// groups are possible: too few samples, or all densities equal.
pub fn split_subsets(densities: &[u32], n_subsets: usize) -> Option<SubsetSplit> {
    let n = densities.len();
    if n_subsets < 2 || n < n_subsets {
        return None;
    }
    let mut sorted: Vec<f64> = densities.iter().map(|&d| f64::from(d)).collect();
    sorted.sort_by(f64::total_cmp);

    let mut centroids: Vec<f64> = (0..n_subsets)
        .map(|i| {
            let q = (i as f64 + 0.5) / n_subsets as f64;
            sorted[((q * n as f64) as usize).min(n - 1)]
        })
        .collect();
    centroids.dedup();
    if centroids.len() < 2 {
        return None;
    }

    let values: Vec<f64> = densities.iter().map(|&d| f64::from(d)).collect();
    let mut assignments = vec![usize::MAX; n];
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for (a, &v) in assignments.iter_mut().zip(&values) {
            let best = nearest(&centroids, v);
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (&a, &v) in assignments.iter().zip(&values) {
            sums[a] += v;
            counts[a] += 1;
        }
        for ((c, s), &m) in centroids.iter_mut().zip(&sums).zip(&counts) {
            if m > 0 {
                *c = s / m as f64;
            }
        }
    }

    // Drop clusters that ended up empty and renumber the rest.
    let mut counts = vec![0usize; centroids.len()];
    for &a in &assignments {
        counts[a] += 1;
    }
    let mut remap = vec![usize::MAX; centroids.len()];
    let mut kept = Vec::new();
    for (i, &m) in counts.iter().enumerate() {
        if m > 0 {
            remap[i] = kept.len();
            kept.push(centroids[i]);
        }
    }
    if kept.len() < 2 {
        return None;
    }
    for a in &mut assignments {
        *a = remap[*a];
    }

    let mut sums = vec![0.0; kept.len()];
    let mut sizes = vec![0usize; kept.len()];
    for (&a, &v) in assignments.iter().zip(&values) {
        sums[a] += v;
        sizes[a] += 1;
    }
    let mut noisy_subset = 0;
    let mut lowest = f64::INFINITY;
    for (i, (&s, &m)) in sums.iter().zip(&sizes).enumerate() {
        let mean = s / m as f64;
        if mean < lowest {
            lowest = mean;
            noisy_subset = i;
        }
    }
    Some(SubsetSplit {
        assignments,
        centroids: kept,
        noisy_subset,
    })
}

/// Index of the closest centroid; ties go to the lower index.
fn nearest(centroids: &[f64], v: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &c) in centroids.iter().enumerate() {
        let d = (v - c).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}
