//! Per-feature quantization into at most `max_bins` ordered bins.

use crate::Scalar;

/// Cut points per feature. Bin `b` holds values in `(cuts[b-1], cuts[b]]`;
/// the last bin is unbounded above. Cuts are midpoints between adjacent
/// observed values, so a split "bin <= b" equals "x <= cuts[b]".
#[derive(Clone, Debug, PartialEq)]
pub struct Binner<T> {
    cuts: Vec<Vec<T>>,
}

/// Column-major bin codes.
#[derive(Clone, Debug, PartialEq)]
pub struct BinnedMatrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<u16>,
}

impl BinnedMatrix {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.data[col * self.rows + row]
    }

    #[inline]
    pub fn column(&self, col: usize) -> &[u16] {
        &self.data[col * self.rows..(col + 1) * self.rows]
    }
}

fn midpoint<T: Scalar>(a: T, b: T) -> T {
    let m = a + (b - a) / (T::one() + T::one());
    // Guard against rounding onto the upper value.
    if m < b {
        m
    } else {
        a
    }
}

impl<T: Scalar> Binner<T> {
    /// Exact (one bin per distinct value) whenever a feature has at most
    /// `max_bins` distinct values; otherwise cuts sit at quantile boundaries.
    pub fn fit(rows: &[&[T]], cols: usize, max_bins: usize) -> Self {
        let max_bins = max_bins.clamp(2, u16::MAX as usize + 1);
        let mut col = Vec::with_capacity(rows.len());
        let cuts = (0..cols)
            .map(|f| {
                col.clear();
                col.extend(rows.iter().map(|r| r[f]));
                col.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite features"));
                let mut uniq = col.clone();
                uniq.dedup();
                if uniq.len() <= max_bins {
                    uniq.windows(2).map(|w| midpoint(w[0], w[1])).collect()
                } else {
                    let n = col.len();
                    let mut cuts: Vec<T> = Vec::with_capacity(max_bins - 1);
                    for j in 1..max_bins {
                        let v = col[j * n / max_bins];
                        let next = uniq.partition_point(|u| *u <= v);
                        if next < uniq.len() {
                            let c = midpoint(v, uniq[next]);
                            if cuts.last().is_none_or(|l| *l < c) {
                                cuts.push(c);
                            }
                        }
                    }
                    cuts
                }
            })
            .collect();
        Binner { cuts }
    }

    pub fn cols(&self) -> usize {
        self.cuts.len()
    }

    pub fn n_bins(&self, f: usize) -> usize {
        self.cuts[f].len() + 1
    }

    pub fn max_bins(&self) -> usize {
        self.cuts.iter().map(|c| c.len() + 1).max().unwrap_or(1)
    }

    pub fn cut(&self, f: usize, b: u16) -> T {
        self.cuts[f][b as usize]
    }

    #[inline]
    pub fn bin(&self, f: usize, v: T) -> u16 {
        self.cuts[f].partition_point(|c| *c < v) as u16
    }

    pub fn transform(&self, rows: &[&[T]]) -> BinnedMatrix {
        let n = rows.len();
        let mut data = vec![0u16; n * self.cols()];
        for f in 0..self.cols() {
            let out = &mut data[f * n..(f + 1) * n];
            for (i, r) in rows.iter().enumerate() {
                out[i] = self.bin(f, r[f]);
            }
        }
        BinnedMatrix { rows: n, cols: self.cols(), data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_bins_for_few_values() {
        let rows: Vec<Vec<f64>> = [3.0, 1.0, 2.0, 2.0, 5.0].iter().map(|v| vec![*v]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let b = Binner::fit(&refs, 1, 256);
        assert_eq!(b.n_bins(0), 4);
        assert_eq!(b.cut(0, 0), 1.5);
        assert_eq!(b.cut(0, 2), 4.0);
        let m = b.transform(&refs);
        assert_eq!(m.column(0), &[2, 0, 1, 1, 3]);
        // Unseen values land on the correct side of every cut.
        assert_eq!(b.bin(0, 1.5), 0);
        assert_eq!(b.bin(0, 1.6), 1);
        assert_eq!(b.bin(0, 100.0), 3);
    }

    #[test]
    fn quantile_bins_are_bounded_and_consistent() {
        let rows: Vec<Vec<f32>> = (0..1000).map(|i| vec![(i * 7 % 1000) as f32]).collect();
        let refs: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
        let b = Binner::fit(&refs, 1, 16);
        assert!(b.n_bins(0) <= 16);
        let m = b.transform(&refs);
        for (i, r) in rows.iter().enumerate() {
            let bin = m.get(i, 0);
            if (bin as usize) < b.n_bins(0) - 1 {
                assert!(r[0] <= b.cut(0, bin));
            }
            if bin > 0 {
                assert!(r[0] > b.cut(0, bin - 1));
            }
        }
    }
}
