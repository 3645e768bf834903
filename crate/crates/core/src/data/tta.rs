use crate::tensor::{crop, mirror_h, resize_bilinear};
use crate::{Error, Result, Scalar, Tensor};

/// Where a full-height (landscape) or full-width (portrait) square sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SquarePosition {
    /// Left or top.
    Start,
    Center,
    /// Right or bottom.
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropKind {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    Center,
    /// The whole square resized down to the crop size.
    Whole,
}

/// Declarative multi-crop set: scales x positions x crops x mirror states.
#[derive(Debug, Clone, PartialEq)]
pub struct CropPlan {
    pub scales: Vec<usize>,
    pub positions: Vec<SquarePosition>,
    pub crops: Vec<CropKind>,
    pub mirror: bool,
    pub crop_size: usize,
}

const ALL_POSITIONS: [SquarePosition; 3] = [SquarePosition::Start, SquarePosition::Center, SquarePosition::End];
const ALL_CROPS: [CropKind; 6] = [
    CropKind::TopLeft,
    CropKind::TopRight,
    CropKind::BottomLeft,
    CropKind::BottomRight,
    CropKind::Center,
    CropKind::Whole,
];

impl CropPlan {
    /// Full protocol at the given scales: 3 squares, 6 crops, mirrored.
    pub fn protocol(scales: Vec<usize>, crop_size: usize) -> Self {
        CropPlan {
            scales,
            positions: ALL_POSITIONS.to_vec(),
            crops: ALL_CROPS.to_vec(),
            mirror: true,
            crop_size,
        }
    }

    pub fn full_default() -> Self {
        Self::protocol(vec![256, 288, 320, 352], 224)
    }

    pub fn mini_default() -> Self {
        Self::protocol(vec![36, 40, 44, 48], 32)
    }

    /// A single crop: the center of the center square at one scale.
    pub fn center_only(scale: usize, crop_size: usize) -> Self {
        CropPlan {
            scales: vec![scale],
            positions: vec![SquarePosition::Center],
            crops: vec![CropKind::Center],
            mirror: false,
            crop_size,
        }
    }

    pub fn total(&self) -> usize {
        self.scales.len() * self.positions.len() * self.crops.len() * if self.mirror { 2 } else { 1 }
    }

    pub fn validate(&self) -> Result<()> {
        let min = self.scales.iter().copied().min().unwrap_or(0);
        if self.positions.is_empty() || self.crops.is_empty() || self.scales.is_empty() {
            return Err(Error::invalid("crop plan has an empty axis"));
        }
        if self.crop_size == 0 || self.crop_size > min {
            return Err(Error::invalid(format!(
                "crop size {} exceeds smallest scale {min}",
                self.crop_size
            )));
        }
        Ok(())
    }
}

fn aspect_resize<T: Scalar>(image: &Tensor<T>, shorter: usize) -> Result<Tensor<T>> {
    let s = image.shape();
    let scaled = |long: usize, short: usize| ((long * shorter) as f64 / short as f64).round() as usize;
    let (h, w) = if s.h <= s.w {
        (shorter, scaled(s.w, s.h).max(shorter))
    } else {
        (scaled(s.h, s.w).max(shorter), shorter)
    };
    resize_bilinear(image, h, w)
}

fn square<T: Scalar>(image: &Tensor<T>, pos: SquarePosition) -> Result<Tensor<T>> {
    let s = image.shape();
    let side = s.h.min(s.w);
    let slack = s.h.max(s.w) - side;
    let off = match pos {
        SquarePosition::Start => 0,
        SquarePosition::Center => slack / 2,
        SquarePosition::End => slack,
    };
    if s.w >= s.h {
        crop(image, 0, off, side, side)
    } else {
        crop(image, off, 0, side, side)
    }
}

fn cut<T: Scalar>(sq: &Tensor<T>, kind: CropKind, c: usize) -> Result<Tensor<T>> {
    let far = sq.shape().h - c;
    match kind {
        CropKind::TopLeft => crop(sq, 0, 0, c, c),
        CropKind::TopRight => crop(sq, 0, far, c, c),
        CropKind::BottomLeft => crop(sq, far, 0, c, c),
        CropKind::BottomRight => crop(sq, far, far, c, c),
        CropKind::Center => crop(sq, far / 2, far / 2, c, c),
        CropKind::Whole => resize_bilinear(sq, c, c),
    }
}

/// All crops of `image` (`1 x C x H x W`) in plan order: scale, then
/// position, then crop kind; mirrored copies of the whole list follow.
pub fn tta_crops<T: Scalar>(image: &Tensor<T>, plan: &CropPlan) -> Result<Vec<Tensor<T>>> {
    plan.validate()?;
    if image.shape().n != 1 {
        return Err(Error::shape("tta_crops", "a single image", image.shape()));
    }
    let mut out = Vec::with_capacity(plan.total());
    for &scale in &plan.scales {
        let resized = aspect_resize(image, scale)?;
        for &pos in &plan.positions {
            let sq = square(&resized, pos)?;
            for &kind in &plan.crops {
                out.push(cut(&sq, kind, plan.crop_size)?);
            }
        }
    }
    if plan.mirror {
        let mirrored: Vec<_> = out.iter().map(mirror_h).collect();
        out.extend(mirrored);
    }
    Ok(out)
}
