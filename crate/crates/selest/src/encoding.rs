//! Bit-level tuple codecs and query feature vectors.
//!
//! The tuple codec maps dictionary codes to the bit vectors the density
//! model trains on; the query featurizer maps conjunctive queries to the
//! real vectors the regressor trains on. Both layouts are serialized into
//! model files, so every mapping here must stay deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relation::{AttributeMeta, PointQuery, RangeQuery};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingMode {
    /// `domain_size` bits per attribute, exactly one set.
    OneHot,
    /// `ceil(log2(domain_size))` bits per attribute, most significant first.
    Binary,
}

/// Per-attribute slice of the concatenated bit vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitSlice {
    pub offset: usize,
    pub width: usize,
}

/// Deterministic mapping between tuples of codes and bit vectors of length
/// `total_bits`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleCodec {
    pub mode: EncodingMode,
    pub domain_sizes: Vec<u32>,
    pub slices: Vec<BitSlice>,
    pub total_bits: usize,
}

fn binary_width(domain_size: u32) -> usize {
    if domain_size <= 1 {
        1
    } else {
        (32 - (domain_size - 1).leading_zeros()) as usize
    }
}

impl TupleCodec {
    pub fn new(schema: &[AttributeMeta], mode: EncodingMode) -> Self {
        Self::from_domain_sizes(&schema.iter().map(|m| m.domain_size).collect::<Vec<_>>(), mode)
    }

    pub fn from_domain_sizes(domain_sizes: &[u32], mode: EncodingMode) -> Self {
        let mut slices = Vec::with_capacity(domain_sizes.len());
        let mut offset = 0;
        for &ds in domain_sizes {
            let width = match mode {
                EncodingMode::Binary => binary_width(ds),
                EncodingMode::OneHot => ds as usize,
            };
            slices.push(BitSlice { offset, width });
            offset += width;
        }
        Self { mode, domain_sizes: domain_sizes.to_vec(), slices, total_bits: offset }
    }

    pub fn num_attributes(&self) -> usize {
        self.domain_sizes.len()
    }

    /// Encode a tuple of codes into a 0.0/1.0 bit vector of length
    /// `total_bits`.
    pub fn encode_tuple(&self, codes: &[u32]) -> Result<Vec<f64>> {
        if codes.len() != self.domain_sizes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} codes for {} attributes",
                codes.len(),
                self.domain_sizes.len()
            )));
        }
        let mut bits = vec![0.0; self.total_bits];
        for (attr, &code) in codes.iter().enumerate() {
            self.write_attr(&mut bits, attr, code)?;
        }
        Ok(bits)
    }

    /// Write one attribute's slice into an existing bit vector.
    pub fn write_attr(&self, bits: &mut [f64], attr: usize, code: u32) -> Result<()> {
        let ds = self.domain_sizes[attr];
        if code >= ds {
            return Err(Error::InvalidArgument(format!(
                "code {code} out of range for attribute {attr} (domain size {ds})"
            )));
        }
        let slice = self.slices[attr];
        match self.mode {
            EncodingMode::Binary => {
                // most significant bit first within the slice
                for j in 0..slice.width {
                    let bit = (code >> (slice.width - 1 - j)) & 1;
                    bits[slice.offset + j] = bit as f64;
                }
            }
            EncodingMode::OneHot => {
                // code 0 maps to 0..01, matching the printed convention
                for j in 0..slice.width {
                    bits[slice.offset + j] = 0.0;
                }
                bits[slice.offset + slice.width - 1 - code as usize] = 1.0;
            }
        }
        Ok(())
    }

    /// Inverse of [`encode_tuple`]. Binary slices that decode to a value
    /// outside the domain yield `None` for that attribute.
    pub fn decode_tuple(&self, bits: &[f64]) -> Result<Vec<Option<u32>>> {
        if bits.len() != self.total_bits {
            return Err(Error::ShapeMismatch(format!(
                "{} bits, codec expects {}",
                bits.len(),
                self.total_bits
            )));
        }
        let mut out = Vec::with_capacity(self.domain_sizes.len());
        for (attr, slice) in self.slices.iter().enumerate() {
            let ds = self.domain_sizes[attr];
            let code = match self.mode {
                EncodingMode::Binary => {
                    let mut v: u32 = 0;
                    for j in 0..slice.width {
                        v = (v << 1) | (bits[slice.offset + j] > 0.5) as u32;
                    }
                    if v < ds {
                        Some(v)
                    } else {
                        None
                    }
                }
                EncodingMode::OneHot => {
                    let set: Vec<usize> = (0..slice.width)
                        .filter(|&j| bits[slice.offset + j] > 0.5)
                        .collect();
                    match set.as_slice() {
                        [j] => Some((slice.width - 1 - j) as u32),
                        _ => {
                            return Err(Error::InvalidArgument(format!(
                                "one-hot slice for attribute {attr} has {} bits set",
                                set.len()
                            )))
                        }
                    }
                }
            };
            out.push(code);
        }
        Ok(out)
    }
}

/// Which featurization a supervised model was trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeaturizationMode {
    Point,
    Range,
}

/// Maps queries to fixed-width feature vectors.
///
/// Point layout: per attribute a `domain_size + 1` one-hot slice whose last
/// slot marks a wildcard. Range layout: per attribute a `(lb, ub)` pair
/// min-max scaled over its code domain, with wildcards as `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryFeaturizer {
    pub domain_sizes: Vec<u32>,
}

impl QueryFeaturizer {
    pub fn new(schema: &[AttributeMeta]) -> Self {
        Self { domain_sizes: schema.iter().map(|m| m.domain_size).collect() }
    }

    pub fn num_attributes(&self) -> usize {
        self.domain_sizes.len()
    }

    pub fn point_width(&self) -> usize {
        self.domain_sizes.iter().map(|&ds| ds as usize + 1).sum()
    }

    pub fn range_width(&self) -> usize {
        2 * self.domain_sizes.len()
    }

    pub fn width(&self, mode: FeaturizationMode) -> usize {
        match mode {
            FeaturizationMode::Point => self.point_width(),
            FeaturizationMode::Range => self.range_width(),
        }
    }

    pub fn featurize_point_query(&self, q: &PointQuery) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.point_width()];
        let mut specified = vec![None; self.domain_sizes.len()];
        for &(attr, code) in &q.predicates {
            if attr >= self.domain_sizes.len() {
                return Err(Error::InvalidQuery(format!("attribute index {attr} out of range")));
            }
            if specified[attr].is_some() {
                return Err(Error::InvalidQuery(format!("duplicate predicate on attribute {attr}")));
            }
            if code >= self.domain_sizes[attr] {
                return Err(Error::InvalidQuery(format!(
                    "code {code} out of range for attribute {attr}"
                )));
            }
            specified[attr] = Some(code);
        }
        let mut offset = 0;
        for (attr, &ds) in self.domain_sizes.iter().enumerate() {
            let slot = match specified[attr] {
                Some(code) => code as usize,
                None => ds as usize, // wildcard slot is last
            };
            out[offset + slot] = 1.0;
            offset += ds as usize + 1;
        }
        Ok(out)
    }

    /// Featurize a code-range query; point predicates are the degenerate
    /// range `[c, c]` and wildcards map to `(0, 1)`.
    pub fn featurize_range_query(&self, q: &RangeQuery) -> Result<Vec<f64>> {
        let mut bounds: Vec<(f64, f64)> = vec![(0.0, 1.0); self.domain_sizes.len()];
        let mut seen = vec![false; self.domain_sizes.len()];
        for &(attr, lo, hi) in &q.predicates {
            if attr >= self.domain_sizes.len() {
                return Err(Error::InvalidQuery(format!("attribute index {attr} out of range")));
            }
            if seen[attr] {
                return Err(Error::InvalidQuery(format!("duplicate predicate on attribute {attr}")));
            }
            seen[attr] = true;
            if lo > hi {
                return Err(Error::InvalidQuery(format!("lo {lo} > hi {hi}")));
            }
            let ds = self.domain_sizes[attr];
            if hi >= ds {
                return Err(Error::InvalidQuery(format!(
                    "bound {hi} out of range for attribute {attr} (domain size {ds})"
                )));
            }
            bounds[attr] = if ds <= 1 {
                (0.0, 1.0)
            } else {
                let span = (ds - 1) as f64;
                (lo as f64 / span, hi as f64 / span)
            };
        }
        let mut out = Vec::with_capacity(self.range_width());
        for (lo, hi) in bounds {
            out.push(lo);
            out.push(hi);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codec(sizes: &[u32], mode: EncodingMode) -> TupleCodec {
        TupleCodec::from_domain_sizes(sizes, mode)
    }

    #[test]
    fn binary_encoding_matches_msb_first_codes() {
        let c = codec(&[4], EncodingMode::Binary);
        assert_eq!(c.total_bits, 2);
        assert_eq!(c.encode_tuple(&[0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(c.encode_tuple(&[1]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(c.encode_tuple(&[2]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(c.encode_tuple(&[3]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn binary_width_is_ceil_log2() {
        let c = codec(&[5], EncodingMode::Binary);
        assert_eq!(c.slices[0].width, 3);
        let c = codec(&[1], EncodingMode::Binary);
        assert_eq!(c.slices[0].width, 1);
    }

    #[test]
    fn onehot_follows_printed_convention() {
        // codes 0..3 print as 0001, 0010, 0100, 1000
        let c = codec(&[4], EncodingMode::OneHot);
        assert_eq!(c.encode_tuple(&[0]).unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(c.encode_tuple(&[2]).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn encode_rejects_out_of_domain_codes() {
        let c = codec(&[4, 3], EncodingMode::Binary);
        assert!(c.encode_tuple(&[0, 3]).is_err());
        assert!(c.encode_tuple(&[4, 0]).is_err());
    }

    #[test]
    fn decode_round_trips_every_tuple() {
        for mode in [EncodingMode::Binary, EncodingMode::OneHot] {
            let c = codec(&[4, 3, 2], mode);
            for a in 0..4 {
                for b in 0..3 {
                    for d in 0..2 {
                        let bits = c.encode_tuple(&[a, b, d]).unwrap();
                        let back = c.decode_tuple(&bits).unwrap();
                        assert_eq!(back, vec![Some(a), Some(b), Some(d)]);
                    }
                }
            }
        }
    }

    #[test]
    fn decode_flags_invalid_binary_patterns() {
        let c = codec(&[3], EncodingMode::Binary);
        // pattern 11 decodes to 3, outside domain size 3
        assert_eq!(c.decode_tuple(&[1.0, 1.0]).unwrap(), vec![None]);
    }

    #[test]
    fn decode_rejects_malformed_onehot_and_lengths() {
        let c = codec(&[4], EncodingMode::OneHot);
        assert!(c.decode_tuple(&[1.0, 0.0, 1.0, 0.0]).is_err());
        assert!(c.decode_tuple(&[0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(c.decode_tuple(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn point_featurization_sets_value_or_wildcard_slot() {
        let f = QueryFeaturizer { domain_sizes: vec![2, 2] };
        // {A1=1, A2=*}
        let v = f.featurize_point_query(&PointQuery::new(vec![(0, 1)])).unwrap();
        assert_eq!(v, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        // {A1=0, A2=1}
        let v = f.featurize_point_query(&PointQuery::new(vec![(0, 0), (1, 1)])).unwrap();
        assert_eq!(v, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        // all wildcards
        let v = f.featurize_point_query(&PointQuery::new(vec![])).unwrap();
        assert_eq!(v, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn point_featurization_has_exactly_m_ones() {
        let f = QueryFeaturizer { domain_sizes: vec![4, 3, 7, 2] };
        let v = f.featurize_point_query(&PointQuery::new(vec![(2, 5), (0, 3)])).unwrap();
        let ones = v.iter().filter(|&&x| x == 1.0).count();
        assert_eq!(ones, 4);
    }

    #[test]
    fn range_featurization_min_max_scales_codes() {
        let f = QueryFeaturizer { domain_sizes: vec![10] };
        let v = f.featurize_range_query(&RangeQuery::new(vec![(0, 2, 7)])).unwrap();
        assert_eq!(v, vec![2.0 / 9.0, 7.0 / 9.0]);
        // unspecified attribute spans the whole unit interval
        let v = f.featurize_range_query(&RangeQuery::new(vec![])).unwrap();
        assert_eq!(v, vec![0.0, 1.0]);
        // point constraint as a degenerate range
        let v = f.featurize_range_query(&RangeQuery::new(vec![(0, 4, 4)])).unwrap();
        assert_eq!(v, vec![4.0 / 9.0, 4.0 / 9.0]);
    }

    #[test]
    fn range_featurization_rejects_inverted_bounds() {
        let f = QueryFeaturizer { domain_sizes: vec![10] };
        assert!(f.featurize_range_query(&RangeQuery::new(vec![(0, 7, 2)])).is_err());
    }

    #[test]
    fn binary_is_never_wider_than_onehot() {
        for sizes in [vec![2u32, 2], vec![4, 3, 2], vec![1, 17, 5], vec![1, 1]] {
            let b = codec(&sizes, EncodingMode::Binary);
            let o = codec(&sizes, EncodingMode::OneHot);
            assert!(b.total_bits <= o.total_bits);
            // equality can only happen when every domain is tiny
            if b.total_bits == o.total_bits {
                assert!(sizes.iter().all(|&ds| ds <= 2));
            }
        }
    }
}
