//! Transformation families `G`, their uniform sampling distributions, and
//! the paired output transforms used to measure equivariance error.
//!
//! Angles are radians. Grids are `[rows, cols]` tensors addressed in pixel
//! coordinates `x = col`, `y = row`; rotations turn by `+angle` in those
//! coordinates, which reads as clockwise on screen. A quarter turn maps
//! `out[r][c] = in[n - 1 - c][r]`.

use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyId {
    Identity,
    #[serde(rename = "rotation_2d")]
    Rotation2D,
    RotationGrid90,
    RotationRangeClass,
    Projective,
    TimeFreqMask,
}

/// How `g'` acts on a model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputRule {
    /// `g'` is the identity: the model should be invariant.
    #[default]
    IdentityOutput,
    /// `g'` maps anything to the parameter encoding of `g`.
    ParamsTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TransformFamily {
    Identity,
    /// Planar rotation of a 2-vector by an angle uniform on `[min_angle, max_angle)`.
    #[serde(rename = "rotation_2d")]
    Rotation2D {
        min_angle: f64,
        max_angle: f64,
        output_rule: OutputRule,
    },
    /// Quarter turns {0, 90, 180, 270} degrees.
    RotationGrid90 {
        output_rule: OutputRule,
    },
    /// Four classes of integer-degree rotations centred on the quarter turns,
    /// each spanning `centre ± half_width_deg`.
    RotationRangeClass {
        half_width_deg: u32,
        output_rule: OutputRule,
    },
    /// Scale, then quarter-turn, then an independent displacement of each
    /// of the four corners, composed into one homography.
    Projective {
        scale_min: f64,
        scale_max: f64,
        max_corner_shift: f64,
        output_rule: OutputRule,
    },
    /// One time mask and one frequency mask on a `[freq_bins, time_bins]`
    /// spectrogram; masked cells take the spectrogram mean.
    TimeFreqMask {
        freq_bins: usize,
        time_bins: usize,
        max_fraction: f64,
    },
}

impl TransformFamily {
    pub fn rotation_2d() -> Self {
        TransformFamily::Rotation2D {
            min_angle: 0.0,
            max_angle: TAU,
            output_rule: OutputRule::IdentityOutput,
        }
    }

    pub fn rotation_range_class() -> Self {
        TransformFamily::RotationRangeClass {
            half_width_deg: 10,
            output_rule: OutputRule::ParamsTarget,
        }
    }

    pub fn projective() -> Self {
        TransformFamily::Projective {
            scale_min: 0.8,
            scale_max: 1.2,
            max_corner_shift: 0.125,
            output_rule: OutputRule::ParamsTarget,
        }
    }

    pub fn time_freq_mask(freq_bins: usize, time_bins: usize) -> Self {
        TransformFamily::TimeFreqMask {
            freq_bins,
            time_bins,
            max_fraction: 0.2,
        }
    }

    pub fn id(&self) -> FamilyId {
        match self {
            TransformFamily::Identity => FamilyId::Identity,
            TransformFamily::Rotation2D { .. } => FamilyId::Rotation2D,
            TransformFamily::RotationGrid90 { .. } => FamilyId::RotationGrid90,
            TransformFamily::RotationRangeClass { .. } => FamilyId::RotationRangeClass,
            TransformFamily::Projective { .. } => FamilyId::Projective,
            TransformFamily::TimeFreqMask { .. } => FamilyId::TimeFreqMask,
        }
    }

    pub fn output_rule(&self) -> OutputRule {
        match self {
            TransformFamily::Identity | TransformFamily::TimeFreqMask { .. } => {
                OutputRule::IdentityOutput
            }
            TransformFamily::Rotation2D { output_rule, .. }
            | TransformFamily::RotationGrid90 { output_rule }
            | TransformFamily::RotationRangeClass { output_rule, .. }
            | TransformFamily::Projective { output_rule, .. } => *output_rule,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match *self {
            TransformFamily::Identity | TransformFamily::RotationGrid90 { .. } => Ok(()),
            TransformFamily::Rotation2D {
                min_angle,
                max_angle,
                ..
            } => {
                if !(min_angle.is_finite() && max_angle.is_finite() && min_angle < max_angle) {
                    return bad(format!(
                        "rotation range [{min_angle}, {max_angle}) is empty"
                    ));
                }
                Ok(())
            }
            TransformFamily::RotationRangeClass { half_width_deg, .. } => {
                if half_width_deg >= 45 {
                    return bad(format!(
                        "half width {half_width_deg} deg makes classes overlap"
                    ));
                }
                Ok(())
            }
            TransformFamily::Projective {
                scale_min,
                scale_max,
                max_corner_shift,
                ..
            } => {
                if !(scale_min.is_finite() && scale_max.is_finite())
                    || scale_min <= 0.0
                    || scale_min > scale_max
                {
                    return bad(format!("scale range [{scale_min}, {scale_max}] is invalid"));
                }
                if !max_corner_shift.is_finite() || !(0.0..0.5).contains(&max_corner_shift) {
                    return bad(format!("corner shift {max_corner_shift} outside [0, 0.5)"));
                }
                Ok(())
            }
            TransformFamily::TimeFreqMask {
                freq_bins,
                time_bins,
                max_fraction,
            } => {
                if freq_bins == 0 || time_bins == 0 {
                    return bad("spectrogram axes must be nonempty".into());
                }
                if !(0.0..=1.0).contains(&max_fraction) {
                    return bad(format!("mask fraction {max_fraction} outside [0, 1]"));
                }
                Ok(())
            }
        }
    }
}

/// A sampled `g` together with its output rule `g'`.
///
/// Parameter layouts:
/// - `Identity`: `[]`
/// - `Rotation2D`: `[angle]`
/// - `RotationGrid90`: `[quarter]` with quarter in 0..4
/// - `RotationRangeClass`: `[class, angle]`
/// - `Projective`: `[scale, quarter, dx0, dy0, dx1, dy1, dx2, dy2, dx3, dy3]`,
///   offsets as fractions of width/height for corners TL, TR, BR, BL
/// - `TimeFreqMask`: `[t0, t_len, f0, f_len]` in cells
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformInstance {
    pub family: FamilyId,
    pub params: Vec<f64>,
    pub output_rule: OutputRule,
}

impl TransformInstance {
    pub fn identity() -> Self {
        TransformInstance {
            family: FamilyId::Identity,
            params: Vec::new(),
            output_rule: OutputRule::IdentityOutput,
        }
    }

    pub fn rotation(angle: f64) -> Self {
        TransformInstance {
            family: FamilyId::Rotation2D,
            params: vec![angle],
            output_rule: OutputRule::IdentityOutput,
        }
    }

    pub fn quarter_turn(quarter: u8) -> Self {
        assert!(quarter < 4);
        TransformInstance {
            family: FamilyId::RotationGrid90,
            params: vec![f64::from(quarter)],
            output_rule: OutputRule::IdentityOutput,
        }
    }

    pub fn with_output_rule(mut self, rule: OutputRule) -> Self {
        self.output_rule = rule;
        self
    }

    fn quarter(&self) -> usize {
        match self.family {
            FamilyId::RotationGrid90 => self.params[0] as usize,
            FamilyId::Projective => self.params[1] as usize,
            FamilyId::RotationRangeClass => self.params[0] as usize,
            _ => 0,
        }
    }

    /// Rotation angle in radians, for the rotation families.
    pub fn angle(&self) -> Option<f64> {
        match self.family {
            FamilyId::Rotation2D => Some(self.params[0]),
            FamilyId::RotationGrid90 => Some(self.params[0] * FRAC_PI_2),
            FamilyId::RotationRangeClass => Some(self.params[1]),
            _ => None,
        }
    }
}

/// Draws one transform uniformly from the family's parameter domain.
pub fn sample_transform(family: &TransformFamily, rng: &mut RngStream) -> TransformInstance {
    let rule = family.output_rule();
    let (id, params) = match *family {
        TransformFamily::Identity => (FamilyId::Identity, Vec::new()),
        TransformFamily::Rotation2D {
            min_angle,
            max_angle,
            ..
        } => (
            FamilyId::Rotation2D,
            vec![rng.uniform(min_angle, max_angle)],
        ),
        TransformFamily::RotationGrid90 { .. } => {
            (FamilyId::RotationGrid90, vec![rng.next_below(4) as f64])
        }
        TransformFamily::RotationRangeClass { half_width_deg, .. } => {
            let class = rng.next_below(4) as i64;
            let hw = i64::from(half_width_deg);
            let degrees = rng.int_inclusive(90 * class - hw, 90 * class + hw);
            (
                FamilyId::RotationRangeClass,
                vec![class as f64, (degrees as f64).to_radians()],
            )
        }
        TransformFamily::Projective {
            scale_min,
            scale_max,
            max_corner_shift,
            ..
        } => {
            let mut params = Vec::with_capacity(10);
            params.push(if scale_min == scale_max {
                scale_min
            } else {
                rng.uniform(scale_min, scale_max)
            });
            params.push(rng.next_below(4) as f64);
            for _ in 0..8 {
                params.push(rng.uniform(-max_corner_shift, max_corner_shift));
            }
            (FamilyId::Projective, params)
        }
        TransformFamily::TimeFreqMask {
            freq_bins,
            time_bins,
            max_fraction,
        } => {
            let mut mask = |axis: usize| {
                let max_len = (max_fraction * axis as f64).floor() as i64;
                let len = rng.int_inclusive(0, max_len.min(axis as i64));
                let start = rng.int_inclusive(0, axis as i64 - len);
                (start as f64, len as f64)
            };
            let (t0, t_len) = mask(time_bins);
            let (f0, f_len) = mask(freq_bins);
            (FamilyId::TimeFreqMask, vec![t0, t_len, f0, f_len])
        }
    };
    let output_rule = if id == FamilyId::Identity {
        OutputRule::IdentityOutput
    } else {
        rule
    };
    TransformInstance {
        family: id,
        params,
        output_rule,
    }
}

/// Checks a transform instance against its family's declared domain.
pub fn in_domain(family: &TransformFamily, g: &TransformInstance) -> bool {
    if g.family != family.id() {
        return false;
    }
    let p = &g.params;
    let is_int = |v: f64| v.fract() == 0.0;
    match *family {
        TransformFamily::Identity => p.is_empty(),
        TransformFamily::Rotation2D {
            min_angle,
            max_angle,
            ..
        } => p.len() == 1 && p[0] >= min_angle && p[0] < max_angle,
        TransformFamily::RotationGrid90 { .. } => {
            p.len() == 1 && is_int(p[0]) && (0.0..4.0).contains(&p[0])
        }
        TransformFamily::RotationRangeClass { half_width_deg, .. } => {
            if p.len() != 2 || !is_int(p[0]) || !(0.0..4.0).contains(&p[0]) {
                return false;
            }
            let degrees = p[1].to_degrees().round();
            let centre = 90.0 * p[0];
            (degrees - centre).abs() <= f64::from(half_width_deg)
                && (p[1].to_degrees() - degrees).abs() < 1e-9
        }
        TransformFamily::Projective {
            scale_min,
            scale_max,
            max_corner_shift,
            ..
        } => {
            p.len() == 10
                && p[0] >= scale_min
                && p[0] <= scale_max
                && is_int(p[1])
                && (0.0..4.0).contains(&p[1])
                && p[2..].iter().all(|d| d.abs() <= max_corner_shift)
        }
        TransformFamily::TimeFreqMask {
            freq_bins,
            time_bins,
            max_fraction,
        } => {
            if p.len() != 4 || !p.iter().all(|v| is_int(*v) && *v >= 0.0) {
                return false;
            }
            let ok = |start: f64, len: f64, axis: usize| {
                len <= (max_fraction * axis as f64).floor() && start + len <= axis as f64
            };
            ok(p[0], p[1], time_bins) && ok(p[2], p[3], freq_bins)
        }
    }
}

fn incompatible(g: &TransformInstance, x: &Tensor) -> Error {
    Error::IncompatibleShape(format!(
        "{:?} cannot act on a tensor of shape {:?}",
        g.family,
        x.shape()
    ))
}

/// Exact cosine/sine for quarter turns.
fn quarter_cos_sin(quarter: usize) -> (f64, f64) {
    match quarter % 4 {
        0 => (1.0, 0.0),
        1 => (0.0, 1.0),
        2 => (-1.0, 0.0),
        _ => (0.0, -1.0),
    }
}

fn rotate_pair(x: f64, y: f64, cos: f64, sin: f64) -> (f64, f64) {
    (x * cos - y * sin, x * sin + y * cos)
}

/// Applies `g` to `x`. The output always has the input's shape.
pub fn apply(g: &TransformInstance, x: &Tensor) -> Result<Tensor> {
    match g.family {
        FamilyId::Identity => Ok(x.clone()),
        FamilyId::Rotation2D | FamilyId::RotationRangeClass | FamilyId::RotationGrid90
            if x.as_pair().is_some() =>
        {
            let (a, b) = x.as_pair().unwrap_or_default();
            let (cos, sin) = if g.family == FamilyId::RotationGrid90 {
                quarter_cos_sin(g.quarter())
            } else {
                let angle = g.angle().unwrap_or_default();
                (angle.cos(), angle.sin())
            };
            let (u, v) = rotate_pair(a, b, cos, sin);
            Ok(Tensor::from_parts(vec![2], vec![u, v]))
        }
        FamilyId::RotationGrid90 => {
            let (rows, cols) = x.as_grid().ok_or_else(|| incompatible(g, x))?;
            if rows != cols {
                return Err(incompatible(g, x));
            }
            let mut out = x.clone();
            for _ in 0..g.quarter() {
                out = quarter_turn_grid(&out, rows);
            }
            Ok(out)
        }
        FamilyId::RotationRangeClass => {
            let (rows, cols) = x.as_grid().ok_or_else(|| incompatible(g, x))?;
            let angle = g.angle().unwrap_or_default();
            let h = about_centre(rotation_matrix(angle.cos(), angle.sin()), rows, cols);
            Ok(warp(x, rows, cols, &h))
        }
        FamilyId::Rotation2D => Err(incompatible(g, x)),
        FamilyId::Projective => {
            let (rows, cols) = x.as_grid().ok_or_else(|| incompatible(g, x))?;
            let h = projective_homography(&g.params, rows, cols)?;
            Ok(warp(x, rows, cols, &h))
        }
        FamilyId::TimeFreqMask => {
            let (freq_bins, time_bins) = x.as_grid().ok_or_else(|| incompatible(g, x))?;
            let [t0, t_len, f0, f_len] = [0, 1, 2, 3].map(|i| g.params[i] as usize);
            if t0 + t_len > time_bins || f0 + f_len > freq_bins {
                return Err(incompatible(g, x));
            }
            let fill = x.mean();
            let mut data = x.data().to_vec();
            for f in 0..freq_bins {
                for t in 0..time_bins {
                    if (t0..t0 + t_len).contains(&t) || (f0..f0 + f_len).contains(&f) {
                        data[f * time_bins + t] = fill;
                    }
                }
            }
            Ok(Tensor::from_parts(x.shape().to_vec(), data))
        }
    }
}

fn quarter_turn_grid(x: &Tensor, n: usize) -> Tensor {
    let src = x.data();
    let mut data = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            data[r * n + c] = src[(n - 1 - c) * n + r];
        }
    }
    Tensor::from_parts(vec![n, n], data)
}

/// Output transform `g'` applied to a model output `y`.
pub fn output_transform(g: &TransformInstance, y: &Tensor) -> Tensor {
    match g.output_rule {
        OutputRule::IdentityOutput => y.clone(),
        OutputRule::ParamsTarget => encode_params(g),
    }
}

/// Canonical vector encoding of `g`.
///
/// Projective transforms encode as the 3x3 homography acting on the unit
/// square (corner coordinates 0 and 1), row-major with the bottom-right
/// entry fixed to 1. Rotation classes and quarter turns are
/// one-hot over (0, 90, 180, 270). Masks encode as `(t0, t_len, f0, f_len)`.
pub fn encode_params(g: &TransformInstance) -> Tensor {
    match g.family {
        FamilyId::Identity => Tensor::empty(),
        FamilyId::Rotation2D => Tensor::from_parts(vec![1], vec![g.params[0]]),
        FamilyId::RotationGrid90 | FamilyId::RotationRangeClass => {
            let mut onehot = vec![0.0; 4];
            onehot[g.quarter()] = 1.0;
            Tensor::from_parts(vec![4], onehot)
        }
        FamilyId::Projective => {
            let side = PROJECTIVE_REFERENCE_SIDE;
            let h = projective_homography(&g.params, side, side)
                .expect("reference grid homography is well-posed");
            Tensor::from_parts(vec![9], h.iter().flatten().copied().collect())
        }
        FamilyId::TimeFreqMask => Tensor::from_parts(vec![4], g.params.clone()),
    }
}

/// A 2x2 grid has its corners on the unit square.
const PROJECTIVE_REFERENCE_SIDE: usize = 2;

type Mat3 = [[f64; 3]; 3];

const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn translation(tx: f64, ty: f64) -> Mat3 {
    [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]
}

fn rotation_matrix(cos: f64, sin: f64) -> Mat3 {
    [[cos, -sin, 0.0], [sin, cos, 0.0], [0.0, 0.0, 1.0]]
}

fn about_centre(m: Mat3, rows: usize, cols: usize) -> Mat3 {
    let cx = (cols as f64 - 1.0) / 2.0;
    let cy = (rows as f64 - 1.0) / 2.0;
    mat_mul(&translation(cx, cy), &mat_mul(&m, &translation(-cx, -cy)))
}

fn projective_homography(params: &[f64], rows: usize, cols: usize) -> Result<Mat3> {
    let scale = params[0];
    let (cos, sin) = quarter_cos_sin(params[1] as usize);
    let scaling = about_centre(
        [[scale, 0.0, 0.0], [0.0, scale, 0.0], [0.0, 0.0, 1.0]],
        rows,
        cols,
    );
    let turn = about_centre(rotation_matrix(cos, sin), rows, cols);

    let (w, h) = ((cols as f64 - 1.0).max(1.0), (rows as f64 - 1.0).max(1.0));
    let src = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let offsets = &params[2..10];
    let corners = if offsets.iter().all(|d| *d == 0.0) {
        IDENTITY3
    } else {
        let mut dst = src;
        for (i, p) in dst.iter_mut().enumerate() {
            p.0 += offsets[2 * i] * w;
            p.1 += offsets[2 * i + 1] * h;
        }
        four_point_homography(&src, &dst)?
    };
    let mut m = mat_mul(&corners, &mat_mul(&turn, &scaling));
    let norm = m[2][2];
    for row in m.iter_mut() {
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    Ok(m)
}

/// Direct linear solve for the homography taking `src[i]` to `dst[i]`.
pub(crate) fn four_point_homography(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Result<Mat3> {
    let mut a = [[0.0f64; 9]; 8];
    for (i, (&(x, y), &(u, v))) in src.iter().zip(dst).enumerate() {
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    // Gaussian elimination with partial pivoting on the augmented 8x9 system.
    for col in 0..8 {
        let pivot = (col..8)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::InvalidConfig(
                "degenerate corner configuration".into(),
            ));
        }
        a.swap(col, pivot);
        let pivot_row = a[col];
        for (row, r) in a.iter_mut().enumerate() {
            if row != col {
                let factor = r[col] / pivot_row[col];
                for (v, p) in r.iter_mut().zip(pivot_row).skip(col) {
                    *v -= factor * p;
                }
            }
        }
    }
    let h: Vec<f64> = (0..8).map(|i| a[i][8] / a[i][i]).collect();
    Ok([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])
}

fn invert(m: &Mat3) -> Option<Mat3> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-300 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            *cell = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
        }
    }
    Some(inv)
}

/// Inverse-maps every output pixel through `forward` and samples the input
/// bilinearly, reading zero outside the grid.
fn warp(x: &Tensor, rows: usize, cols: usize, forward: &Mat3) -> Tensor {
    let src = x.data();
    let Some(inv) = invert(forward) else {
        return Tensor::from_parts(vec![rows, cols], vec![0.0; rows * cols]);
    };
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
            0.0
        } else {
            src[r as usize * cols + c as usize]
        }
    };
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (px, py) = (c as f64, r as f64);
            let wz = inv[2][0] * px + inv[2][1] * py + inv[2][2];
            if wz.abs() < 1e-300 {
                data.push(0.0);
                continue;
            }
            let sx = (inv[0][0] * px + inv[0][1] * py + inv[0][2]) / wz;
            let sy = (inv[1][0] * px + inv[1][1] * py + inv[1][2]) / wz;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = at(y0, x0) * (1.0 - fx) * (1.0 - fy)
                + at(y0, x0 + 1) * fx * (1.0 - fy)
                + at(y0 + 1, x0) * (1.0 - fx) * fy
                + at(y0 + 1, x0 + 1) * fx * fy;
            data.push(if v.is_finite() { v } else { 0.0 });
        }
    }
    Tensor::from_parts(vec![rows, cols], data)
}
