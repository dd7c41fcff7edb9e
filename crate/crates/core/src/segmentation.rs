//! Splitting one long sequence into independently processed segments.
//!
//! A [`SegmentPlan`] tiles `N` steps with `M` non-overlapping segments of
//! lengths `K_m`. Segment `m` starts at `j(m) = Σ_{i<m} K_i` and its samples
//! are re-indexed from zero. Every segment is unrolled from a zero initial
//! state, so segments can be processed independently and in any order.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::Vector;

/// `u[n]`: 1 for `n ≥ 0`, else 0.
pub fn unit_step(n: i64) -> u8 {
    u8::from(n >= 0)
}

/// `δ[n] = u[n] − u[n−1]`: 1 only at `n = 0`.
pub fn unit_sample(n: i64) -> u8 {
    unit_step(n) - unit_step(n - 1)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentPlan {
    lengths: Vec<usize>,
}

impl SegmentPlan {
    pub fn new(lengths: Vec<usize>) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::InvalidPlan("a plan needs at least one segment".into()));
        }
        if let Some(m) = lengths.iter().position(|&k| k == 0) {
            return Err(Error::InvalidPlan(format!("segment {m} has zero length")));
        }
        Ok(SegmentPlan { lengths })
    }

    /// Segments of `segment_len` steps covering `total` steps. The last
    /// segment is full length; `padded_total() − total` zero steps must be
    /// appended to the data (see [`Padding::Zeros`]).
    pub fn uniform(total: usize, segment_len: usize) -> Result<Self> {
        if segment_len == 0 || total == 0 {
            return Err(Error::InvalidPlan("segment length and total must be positive".into()));
        }
        Self::new(vec![segment_len; total.div_ceil(segment_len)])
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn num_segments(&self) -> usize {
        self.lengths.len()
    }

    pub fn total(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// `j(m)` for every segment.
    pub fn offsets(&self) -> Vec<usize> {
        self.lengths
            .iter()
            .scan(0, |acc, &k| {
                let j = *acc;
                *acc += k;
                Some(j)
            })
            .collect()
    }

    /// Rectangular window `w_m[n]`: 1 iff `j(m) ≤ n ≤ j(m) + K_m − 1`.
    pub fn window(&self, m: usize, n: i64) -> Result<u8> {
        if m >= self.lengths.len() {
            return Err(Error::IndexOutOfRange {
                what: "segment window",
                index: m,
                len: self.lengths.len(),
            });
        }
        let j = self.offsets()[m] as i64;
        let k = self.lengths[m] as i64;
        // Σ_{k'=0}^{K_m−1} δ[n − j(m) − k']
        Ok((0..k).map(|kk| unit_sample(n - j - kk)).sum())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceData {
    pub inputs: Vec<Vector>,
    pub targets: Option<Vec<Vector>>,
}

impl SequenceData {
    pub fn new(inputs: Vec<Vector>, targets: Option<Vec<Vector>>) -> Result<Self> {
        if let Some(t) = &targets {
            if t.len() != inputs.len() {
                return Err(Error::LengthMismatch {
                    sequence: inputs.len(),
                    plan: t.len(),
                });
            }
        }
        Ok(SequenceData { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub index: usize,
    pub offset: usize,
    pub inputs: Vec<Vector>,
    pub targets: Option<Vec<Vector>>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// The plan must cover the sequence exactly.
    Exact,
    /// A plan longer than the sequence is filled with zero input (and target) vectors.
    Zeros,
}

/// `x̃_m[n] = x[n + j(m)]` for `0 ≤ n ≤ K_m − 1`, for every segment `m`.
pub fn extract_segments(data: &SequenceData, plan: &SegmentPlan, padding: Padding) -> Result<Vec<Segment>> {
    let n = data.len();
    let total = plan.total();
    if n == 0 {
        return Err(Error::LengthMismatch { sequence: 0, plan: total });
    }
    if total < n || (total > n && padding == Padding::Exact) {
        return Err(Error::LengthMismatch { sequence: n, plan: total });
    }
    let dx = data.inputs[0].len();
    let dy = data.targets.as_ref().map(|t| t[0].len());
    let input_at = |i: usize| data.inputs.get(i).cloned().unwrap_or_else(|| Vector::zeros(dx));
    let target_at = |t: &Vec<Vector>, i: usize| t.get(i).cloned().unwrap_or_else(|| Vector::zeros(dy.unwrap_or(1)));

    Ok(plan
        .offsets()
        .into_iter()
        .zip(plan.lengths())
        .enumerate()
        .map(|(m, (j, &k))| Segment {
            index: m,
            offset: j,
            inputs: (j..j + k).map(input_at).collect(),
            targets: data.targets.as_ref().map(|t| (j..j + k).map(|i| target_at(t, i)).collect()),
        })
        .collect())
}

/// Concatenate segment inputs back into one sequence, in segment-index order.
pub fn concatenate(segments: &[Segment]) -> Vec<Vector> {
    let mut ordered: Vec<&Segment> = segments.iter().collect();
    ordered.sort_by_key(|s| s.index);
    ordered.into_iter().flat_map(|s| s.inputs.iter().cloned()).collect()
}

/// Anything that can be unrolled over one segment from a zero initial state.
pub trait Unroll: Sync {
    type Trace: Send;
    fn unroll(&self, inputs: &[Vector]) -> Result<Self::Trace>;
}

/// Run `cell` over each segment. Segments share no state, so they are
/// processed on the rayon pool; result `i` belongs to `segments[i]`.
pub fn run_segments<C: Unroll>(cell: &C, segments: &[Segment]) -> Result<Vec<C::Trace>> {
    segments.par_iter().map(|seg| cell.unroll(&seg.inputs)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize) -> SequenceData {
        SequenceData::new((0..n).map(|i| Vector::filled(2, i as f64)).collect(), None).unwrap()
    }

    #[test]
    fn step_and_sample() {
        assert_eq!(unit_step(-1), 0);
        assert_eq!(unit_step(0), 1);
        assert_eq!(unit_sample(0), 1);
        assert_eq!(unit_sample(1), 0);
        assert_eq!(unit_sample(-1), 0);
        assert_eq!((-5..=5).map(|n| unit_sample(n) as u32).sum::<u32>(), 1);
    }

    #[test]
    fn offsets() {
        assert_eq!(SegmentPlan::new(vec![3, 2, 4]).unwrap().offsets(), vec![0, 3, 5]);
        assert_eq!(SegmentPlan::new(vec![7]).unwrap().offsets(), vec![0]);
        assert_eq!(SegmentPlan::new(vec![1, 1, 1, 1]).unwrap().offsets(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn invalid_plans() {
        assert!(SegmentPlan::new(vec![]).is_err());
        assert!(SegmentPlan::new(vec![2, 0]).is_err());
    }

    #[test]
    fn windows() {
        let plan = SegmentPlan::new(vec![3, 2]).unwrap();
        let w: Vec<u8> = (-1..7).map(|n| plan.window(1, n).unwrap()).collect();
        assert_eq!(w, vec![0, 0, 0, 0, 1, 1, 0, 0]);
        assert_eq!(plan.window(0, -1).unwrap(), 0);
        for n in 0..5 {
            assert_eq!(plan.window(0, n).unwrap() + plan.window(1, n).unwrap(), 1);
        }
        assert!(plan.window(2, 0).is_err());
    }

    #[test]
    fn extraction_cases() {
        let data = seq(5);
        let segs = extract_segments(&data, &SegmentPlan::new(vec![2, 3]).unwrap(), Padding::Exact).unwrap();
        assert_eq!(segs[0].inputs, data.inputs[0..2].to_vec());
        assert_eq!(segs[1].inputs, data.inputs[2..5].to_vec());
        assert_eq!(segs[1].offset, 2);

        let whole = extract_segments(&data, &SegmentPlan::new(vec![5]).unwrap(), Padding::Exact).unwrap();
        assert_eq!(whole.len(), 1);
        assert_eq!(whole[0].inputs, data.inputs);
    }

    #[test]
    fn length_mismatch_and_padding() {
        let data = seq(5);
        let plan = SegmentPlan::uniform(5, 2).unwrap();
        assert_eq!(plan.lengths(), &[2, 2, 2]);
        assert!(matches!(
            extract_segments(&data, &plan, Padding::Exact),
            Err(Error::LengthMismatch { sequence: 5, plan: 6 })
        ));
        let segs = extract_segments(&data, &plan, Padding::Zeros).unwrap();
        assert_eq!(segs[2].inputs[1], Vector::zeros(2));
        assert_eq!(segs[2].inputs[0], data.inputs[4]);
        // A plan shorter than the data is never acceptable.
        assert!(extract_segments(&data, &SegmentPlan::new(vec![4]).unwrap(), Padding::Zeros).is_err());
    }
}
