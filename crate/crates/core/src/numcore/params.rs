use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::rng::RngStream;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A named block inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn new(name: &str, shape: &[usize]) -> Self {
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered segment list describing how a flat vector splits into tensors.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Layout(pub Vec<Segment>);

impl Layout {
    pub fn total_len(&self) -> usize {
        self.0.iter().map(Segment::len).sum()
    }

    /// `(offset, segment)` pairs in order.
    pub fn offsets(&self) -> impl Iterator<Item = (usize, &Segment)> {
        self.0.iter().scan(0usize, |off, s| {
            let here = *off;
            *off += s.len();
            Some((here, s))
        })
    }

    pub fn find(&self, name: &str) -> Option<(usize, &Segment)> {
        self.offsets().find(|(_, s)| s.name == name)
    }

    /// Hex sha256 over the canonical JSON of the layout.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(&self.0).expect("layout serializes");
        hex_digest(&json)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let out = Sha256::digest(bytes);
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Flat model weights with `l2` geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::Shape(format!(
                "layout holds {} values, got {}",
                layout.total_len(),
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    /// Single unnamed segment, for tests and scalar toy problems.
    pub fn from_slice(values: &[f64]) -> Self {
        Self {
            layout: Layout(vec![Segment::new("theta", &[values.len()])]),
            values: values.to_vec(),
        }
    }

    pub fn zeros(layout: Layout) -> Self {
        Self {
            values: vec![0.0; layout.total_len()],
            layout,
        }
    }

    /// Concatenates named tensors in order.
    pub fn flatten(parts: &[(&str, &Tensor)]) -> Self {
        let mut values = Vec::new();
        let mut segs = Vec::new();
        for (name, t) in parts {
            segs.push(Segment::new(name, t.shape()));
            values.extend_from_slice(t.values());
        }
        Self {
            values,
            layout: Layout(segs),
        }
    }

    pub fn unflatten(&self) -> Vec<(String, Tensor)> {
        self.layout
            .offsets()
            .map(|(off, s)| {
                let t = Tensor::new(s.shape.clone(), self.values[off..off + s.len()].to_vec())
                    .expect("segment matches layout");
                (s.name.clone(), t)
            })
            .collect()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .find(name)
            .map(|(off, s)| &self.values[off..off + s.len()])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.layout.clone())
    }

    fn check_layout(&self, other: &Self) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::Shape("parameter layouts differ".into()));
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        l2(&self.values)
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &Self) -> Result<Self> {
        self.check_layout(other)?;
        Ok(Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x + a * y)
                .collect(),
            layout: self.layout.clone(),
        })
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * a).collect(),
            layout: self.layout.clone(),
        }
    }

    pub fn distance(&self, other: &Self) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Overflow-safe Euclidean norm.
pub fn l2(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let s: f64 = v.iter().map(|x| (x / scale) * (x / scale)).sum();
    scale * s.sqrt()
}

/// Projects `v` onto the closed `l2` ball of the given radius around `center`.
pub fn l2_project(v: &ParameterVector, center: &ParameterVector, radius: f64) -> Result<ParameterVector> {
    if !(radius >= 0.0) {
        return Err(Error::Domain(format!("projection radius {radius} < 0")));
    }
    let offset = v.sub(center)?;
    let dist = offset.norm();
    if dist <= radius {
        return Ok(v.clone());
    }
    let factor = radius / dist;
    let mut out: Vec<f64> = center
        .values
        .iter()
        .zip(&offset.values)
        .map(|(c, o)| c + o * factor)
        .collect();
    // Rounding can leave the point a few ulps outside; pull it back.
    // The margin doubles each pass so the loop ends even when rounding
    // against a large center swallows small shrinks.
    let mut d = l2_diff(&out, &center.values);
    let mut margin = 4.0 * f64::EPSILON;
    while d > radius {
        let shrink = (radius / d * (1.0 - margin)).max(0.0);
        for (o, c) in out.iter_mut().zip(&center.values) {
            *o = c + (*o - c) * shrink;
        }
        d = l2_diff(&out, &center.values);
        margin = (margin * 2.0).min(1.0);
    }
    Ok(ParameterVector {
        values: out,
        layout: v.layout.clone(),
    })
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    l2(&d)
}

/// Clips a raw vector to `l2` norm at most `radius` around the origin.
pub fn clip_l2(v: &[f64], radius: f64) -> Vec<f64> {
    let n = l2(v);
    if n <= radius || n == 0.0 {
        return v.to_vec();
    }
    let f = radius / n;
    let mut out: Vec<f64> = v.iter().map(|x| x * f).collect();
    let mut margin = 4.0 * f64::EPSILON;
    while l2(&out) > radius {
        let s = 1.0 - margin;
        out.iter_mut().for_each(|x| *x *= s);
        margin = (margin * 2.0).min(1.0);
    }
    out
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every coordinate.
pub fn gaussian_perturb(theta: &ParameterVector, sigma: f64, rng: &mut RngStream) -> Result<ParameterVector> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("gaussian sigma must be > 0, got {sigma}")));
    }
    let values = theta
        .values
        .iter()
        .map(|v| v + sigma * rng.standard_normal())
        .collect();
    Ok(ParameterVector {
        values,
        layout: theta.layout.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParameterVector {
        ParameterVector::from_slice(v)
    }

    #[test]
    fn projection_examples() {
        let zero = pv(&[0.0, 0.0]);
        assert_eq!(l2_project(&pv(&[3.0, 4.0]), &zero, 5.0).unwrap().values(), &[3.0, 4.0]);
        let p = l2_project(&pv(&[3.0, 4.0]), &zero, 1.0).unwrap();
        assert!((p.values()[0] - 0.6).abs() < 1e-15);
        assert!((p.values()[1] - 0.8).abs() < 1e-15);
        let x = pv(&[1.5, -2.0]);
        assert_eq!(l2_project(&x, &x, 0.3).unwrap(), x);
        assert_eq!(l2_project(&x, &x, 0.0).unwrap(), x);
    }

    #[test]
    fn projection_rejects_layout_mismatch_and_negative_radius() {
        assert!(matches!(
            l2_project(&pv(&[1.0]), &pv(&[1.0, 2.0]), 1.0),
            Err(Error::Shape(_))
        ));
        assert!(l2_project(&pv(&[1.0]), &pv(&[0.0]), -1.0).is_err());
    }

    #[test]
    fn flatten_unflatten_round_trip() {
        let w = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::vector(vec![-1.0, -2.0, -3.0]);
        let p = ParameterVector::flatten(&[("w", &w), ("b", &b)]);
        assert_eq!(p.len(), 9);
        let parts = p.unflatten();
        assert_eq!(parts[0].1, w);
        assert_eq!(parts[1].1, b);
        assert_eq!(p.segment("b").unwrap(), &[-1.0, -2.0, -3.0]);
    }

    #[test]
    fn gaussian_perturb_validates_sigma_and_replays() {
        let theta = pv(&[1.0; 16]);
        let mut r = RngStream::new(3, 0);
        assert!(gaussian_perturb(&theta, 0.0, &mut r).is_err());
        assert!(gaussian_perturb(&theta, -1.0, &mut r).is_err());
        let a = gaussian_perturb(&theta, 0.5, &mut RngStream::new(9, 4)).unwrap();
        let b = gaussian_perturb(&theta, 0.5, &mut RngStream::new(9, 4)).unwrap();
        assert_eq!(a, b);
        let tiny = gaussian_perturb(&theta, 1e-300, &mut RngStream::new(9, 4)).unwrap();
        for (x, y) in tiny.values().iter().zip(theta.values()) {
            assert!((x - y).abs() < 1e-100);
        }
    }

    #[test]
    fn gaussian_moments_at_unit_sigma() {
        // 4-sigma CLT band for 1e5 draws: mean within 4/sqrt(1e5) ~ 0.0126,
        // variance within 4*sqrt(2/1e5) ~ 0.018.
        let theta = ParameterVector::zeros(Layout(vec![Segment::new("x", &[100_000])]));
        let s = gaussian_perturb(&theta, 1.0, &mut RngStream::new(2024, 1)).unwrap();
        let n = s.len() as f64;
        let mean = s.values().iter().sum::<f64>() / n;
        let var = s.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 0.02, "mean {mean}");
        assert!((0.97..=1.03).contains(&var), "var {var}");
    }

    #[test]
    fn norm_is_zero_only_at_origin() {
        assert_eq!(pv(&[0.0, 0.0, 0.0]).norm(), 0.0);
        assert!(pv(&[0.0, 1e-200, 0.0]).norm() > 0.0);
        assert!((pv(&[1e200, 1e200]).norm() - 1e200 * 2f64.sqrt()).abs() < 1e186);
    }

    proptest! {
        #[test]
        fn projection_is_contained_and_idempotent(
            v in proptest::collection::vec(-1e3f64..1e3, 1..12),
            shift in -10.0f64..10.0,
            r in 0.0f64..50.0,
        ) {
            let c: Vec<f64> = v.iter().map(|x| x * 0.3 + shift).collect();
            let (v, c) = (pv(&v), pv(&c));
            let p = l2_project(&v, &c, r).unwrap();
            prop_assert!(p.distance(&c).unwrap() <= r * (1.0 + 1e-12));
            let pp = l2_project(&p, &c, r).unwrap();
            prop_assert_eq!(pp, p);
        }
    }
}
