use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which part of the encoder–decoder split a segment belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Encoder,
    DecoderBody,
    DecoderOutput,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Encoder => "encoder",
            Role::DecoderBody => "decoder-body",
            Role::DecoderOutput => "decoder-output",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "encoder" => Some(Role::Encoder),
            "decoder-body" => Some(Role::DecoderBody),
            "decoder-output" => Some(Role::DecoderOutput),
            _ => None,
        }
    }

    /// Encoder and decoder body: everything except the output layer.
    pub const SHARED: &'static [Role] = &[Role::Encoder, Role::DecoderBody];
    pub const DECODER: &'static [Role] = &[Role::DecoderBody, Role::DecoderOutput];
    pub const HEAD: &'static [Role] = &[Role::DecoderOutput];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub role: Role,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn is_bias(&self) -> bool {
        self.name.ends_with(".bias")
    }
}

/// Ordered, contiguous, disjoint segments covering a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
    len: usize,
}

impl Layout {
    /// Assigns offsets in order; the segments tile `0..len` by construction.
    pub fn new(segments: impl IntoIterator<Item = (String, Role, usize, usize)>) -> Self {
        let mut offset = 0;
        let segments = segments
            .into_iter()
            .map(|(name, role, rows, cols)| {
                let s = Segment {
                    name,
                    role,
                    rows,
                    cols,
                    offset,
                };
                offset += s.len();
                s
            })
            .collect();
        Self { segments, len: offset }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Flat ranges of every segment whose role is in `roles`.
    pub fn ranges(&self, roles: &[Role]) -> Vec<Range<usize>> {
        self.segments
            .iter()
            .filter(|s| roles.contains(&s.role))
            .map(Segment::range)
            .collect()
    }
}

/// A flat parameter vector tagged with its layout. Gradients, control
/// variates and model deltas share this type.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ModelParams {
    pub fn new(values: Vec<f64>, layout: Arc<Layout>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Shape(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn check_layout(&self, other: &Self) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Shape("parameter layouts differ".into()))
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    /// `self - other` as a new vector.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.check_layout(other)?;
        Ok(Self {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
            layout: self.layout.clone(),
        })
    }

    /// Concatenated values of the segments with the given roles.
    pub fn view(&self, roles: &[Role]) -> Vec<f64> {
        self.layout
            .ranges(roles)
            .into_iter()
            .flat_map(|r| self.values[r].iter().copied())
            .collect()
    }

    /// Overwrites the segments with the given roles by those of `source`.
    pub fn copy_roles_from(&mut self, source: &Self, roles: &[Role]) -> Result<()> {
        self.check_layout(source)?;
        for r in self.layout.clone().ranges(roles) {
            self.values[r.clone()].copy_from_slice(&source.values[r]);
        }
        Ok(())
    }

    /// Zeroes everything outside the given roles.
    pub fn mask_to(&mut self, roles: &[Role]) {
        let keep = self.layout.ranges(roles);
        let mut start = 0;
        for r in keep
            .iter()
            .chain(std::iter::once(&(self.values.len()..self.values.len())))
        {
            for v in &mut self.values[start..r.start] {
                *v = 0.0;
            }
            start = r.end;
        }
    }

    /// Squared Euclidean distance restricted to the given roles.
    pub fn sq_dist_on(&self, other: &Self, roles: &[Role]) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self
            .layout
            .ranges(roles)
            .into_iter()
            .flat_map(|r| self.values[r.clone()].iter().zip(&other.values[r]))
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// `params - lr * gradient`.
pub fn sgd_step(params: &ModelParams, gradient: &ModelParams, lr: f64) -> Result<ModelParams> {
    let mut next = params.clone();
    next.add_scaled(gradient, -lr)?;
    Ok(next)
}
