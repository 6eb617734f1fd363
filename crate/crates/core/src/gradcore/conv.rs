//! Grouped 2-D convolution and its transpose, stride 1, no dilation.
//!
//! Weight layouts follow the usual convention: a forward convolution stores
//! `[out_depth, in_depth / groups, kh, kw]`, a transposed convolution stores
//! `[in_depth, out_depth / groups, kh, kw]`.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// How a layer pads its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    /// Zero-pad the time axis so the output keeps its length; no height padding.
    SameTime,
    /// No padding at all.
    Valid,
}

/// Explicit zero padding (forward) or cropping (transpose) per side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn for_kernel(mode: PadMode, kw: usize) -> Self {
        match mode {
            PadMode::Valid => Padding::default(),
            PadMode::SameTime => {
                let total = kw.saturating_sub(1);
                let left = total / 2;
                Padding {
                    top: 0,
                    bottom: 0,
                    left,
                    right: total - left,
                }
            }
        }
    }
}

/// Validated geometry of one convolution call.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub cin_g: usize,
    pub cout_g: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub hout: usize,
    pub wout: usize,
    pub pad: Padding,
}

/// Index range `[lo, hi)` of output positions `o` for which `o + tap - offset`
/// lands inside `[0, len)`, clipped to `[0, out_len)`.
#[inline]
fn valid_range(tap: usize, offset: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = offset.saturating_sub(tap);
    let hi = (len + offset).saturating_sub(tap).min(out_len);
    (lo, hi.max(lo))
}

pub(crate) fn conv_geom(
    input: [usize; 4],
    weight: [usize; 4],
    groups: usize,
    pad: Padding,
) -> Result<ConvGeom> {
    let [n, cin, h, w] = input;
    let [cout, cin_g, kh, kw] = weight;
    if groups == 0 || cin_g * groups != cin || cout % groups != 0 {
        return Err(Error::shape(
            "conv2d",
            format!("input depth {cin}, weight {weight:?}, groups {groups}"),
        ));
    }
    let hp = h + pad.top + pad.bottom;
    let wp = w + pad.left + pad.right;
    if kh == 0 || kw == 0 || kh > hp || kw > wp {
        return Err(Error::shape(
            "conv2d",
            format!("kernel ({kh},{kw}) does not fit padded input ({hp},{wp})"),
        ));
    }
    Ok(ConvGeom {
        n,
        cin,
        cout,
        cin_g,
        cout_g: cout / groups,
        h,
        w,
        kh,
        kw,
        hout: hp - kh + 1,
        wout: wp - kw + 1,
        pad,
    })
}

pub(crate) fn conv_transpose_geom(
    input: [usize; 4],
    weight: [usize; 4],
    groups: usize,
    pad: Padding,
) -> Result<ConvGeom> {
    let [n, cin, h, w] = input;
    let [wcin, cout_g, kh, kw] = weight;
    if groups == 0 || wcin != cin || cin % groups != 0 {
        return Err(Error::shape(
            "transpose_conv2d",
            format!("input depth {cin}, weight {weight:?}, groups {groups}"),
        ));
    }
    let full_h = h + kh - 1;
    let full_w = w + kw - 1;
    if kh == 0 || kw == 0 || pad.top + pad.bottom >= full_h || pad.left + pad.right >= full_w {
        return Err(Error::shape(
            "transpose_conv2d",
            format!("crop {pad:?} leaves nothing of ({full_h},{full_w})"),
        ));
    }
    Ok(ConvGeom {
        n,
        cin,
        cout: cout_g * groups,
        cin_g: cin / groups,
        cout_g,
        h,
        w,
        kh,
        kw,
        hout: full_h - pad.top - pad.bottom,
        wout: full_w - pad.left - pad.right,
        pad,
    })
}

pub fn conv2d(
    input: &Tensor4,
    weight: &Tensor4,
    bias: Option<&Tensor4>,
    groups: usize,
    pad: Padding,
) -> Result<Tensor4> {
    let g = conv_geom(input.shape(), weight.shape(), groups, pad)?;
    check_bias(bias, g.cout, "conv2d")?;
    let mut out = Tensor4::zeros([g.n, g.cout, g.hout, g.wout]);
    let x = input.data();
    let wt = weight.data();
    for b in 0..g.n {
        for co in 0..g.cout {
            let grp = co / g.cout_g;
            let o_base = (b * g.cout + co) * g.hout * g.wout;
            if let Some(bias) = bias {
                out.data_mut()[o_base..o_base + g.hout * g.wout].fill(bias.data()[co]);
            }
            for cl in 0..g.cin_g {
                let ci = grp * g.cin_g + cl;
                let i_base = (b * g.cin + ci) * g.h * g.w;
                for i in 0..g.kh {
                    let (oh_lo, oh_hi) = valid_range(i, g.pad.top, g.h, g.hout);
                    for j in 0..g.kw {
                        let wv = wt[((co * g.cin_g + cl) * g.kh + i) * g.kw + j];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ow_lo, ow_hi) = valid_range(j, g.pad.left, g.w, g.wout);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        let len = ow_hi - ow_lo;
                        let iw0 = ow_lo + j - g.pad.left;
                        for oh in oh_lo..oh_hi {
                            let ih = oh + i - g.pad.top;
                            let src = &x[i_base + ih * g.w + iw0..][..len];
                            let o0 = o_base + oh * g.wout + ow_lo;
                            let dst = &mut out.data_mut()[o0..o0 + len];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a forward convolution with respect to input, weight and bias.
pub fn conv2d_backward(
    input: &Tensor4,
    weight: &Tensor4,
    groups: usize,
    pad: Padding,
    grad_out: &Tensor4,
    want_input: bool,
) -> Result<(Option<Tensor4>, Tensor4, Tensor4)> {
    let g = conv_geom(input.shape(), weight.shape(), groups, pad)?;
    let mut gin = want_input.then(|| Tensor4::zeros(input.shape()));
    let mut gw = Tensor4::zeros(weight.shape());
    let mut gb = Tensor4::zeros([1, g.cout, 1, 1]);
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    for b in 0..g.n {
        for co in 0..g.cout {
            let grp = co / g.cout_g;
            let o_base = (b * g.cout + co) * g.hout * g.wout;
            gb.data_mut()[co] += go[o_base..o_base + g.hout * g.wout].iter().sum::<f64>();
            for cl in 0..g.cin_g {
                let ci = grp * g.cin_g + cl;
                let i_base = (b * g.cin + ci) * g.h * g.w;
                for i in 0..g.kh {
                    let (oh_lo, oh_hi) = valid_range(i, g.pad.top, g.h, g.hout);
                    for j in 0..g.kw {
                        let widx = ((co * g.cin_g + cl) * g.kh + i) * g.kw + j;
                        let wv = wt[widx];
                        let (ow_lo, ow_hi) = valid_range(j, g.pad.left, g.w, g.wout);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        let len = ow_hi - ow_lo;
                        let iw0 = ow_lo + j - g.pad.left;
                        let mut acc = 0.0;
                        for oh in oh_lo..oh_hi {
                            let ih = oh + i - g.pad.top;
                            let src0 = i_base + ih * g.w + iw0;
                            let gsrc = &go[o_base + oh * g.wout + ow_lo..][..len];
                            let xsrc = &x[src0..src0 + len];
                            acc += gsrc.iter().zip(xsrc).map(|(a, b)| a * b).sum::<f64>();
                            if let Some(gin) = gin.as_mut() {
                                let dst = &mut gin.data_mut()[src0..src0 + len];
                                for (d, s) in dst.iter_mut().zip(gsrc) {
                                    *d += wv * s;
                                }
                            }
                        }
                        gw.data_mut()[widx] += acc;
                    }
                }
            }
        }
    }
    Ok((gin, gw, gb))
}

pub fn conv_transpose2d(
    input: &Tensor4,
    weight: &Tensor4,
    bias: Option<&Tensor4>,
    groups: usize,
    pad: Padding,
) -> Result<Tensor4> {
    let g = conv_transpose_geom(input.shape(), weight.shape(), groups, pad)?;
    check_bias(bias, g.cout, "transpose_conv2d")?;
    let mut out = Tensor4::zeros([g.n, g.cout, g.hout, g.wout]);
    if let Some(bias) = bias {
        for b in 0..g.n {
            for co in 0..g.cout {
                out.plane_mut(b, co).fill(bias.data()[co]);
            }
        }
    }
    let x = input.data();
    let wt = weight.data();
    for b in 0..g.n {
        for ci in 0..g.cin {
            let grp = ci / g.cin_g;
            let i_base = (b * g.cin + ci) * g.h * g.w;
            for cl in 0..g.cout_g {
                let co = grp * g.cout_g + cl;
                let o_base = (b * g.cout + co) * g.hout * g.wout;
                for i in 0..g.kh {
                    // output row oh = ih + i - top
                    let (ih_lo, ih_hi) = valid_range(i, g.pad.top, g.hout, g.h);
                    for j in 0..g.kw {
                        let wv = wt[((ci * g.cout_g + cl) * g.kh + i) * g.kw + j];
                        if wv == 0.0 {
                            continue;
                        }
                        let (iw_lo, iw_hi) = valid_range(j, g.pad.left, g.wout, g.w);
                        if iw_lo >= iw_hi {
                            continue;
                        }
                        let len = iw_hi - iw_lo;
                        let ow0 = iw_lo + j - g.pad.left;
                        for ih in ih_lo..ih_hi {
                            let oh = ih + i - g.pad.top;
                            let src = &x[i_base + ih * g.w + iw_lo..][..len];
                            let o0 = o_base + oh * g.wout + ow0;
                            let dst = &mut out.data_mut()[o0..o0 + len];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn conv_transpose2d_backward(
    input: &Tensor4,
    weight: &Tensor4,
    groups: usize,
    pad: Padding,
    grad_out: &Tensor4,
    want_input: bool,
) -> Result<(Option<Tensor4>, Tensor4, Tensor4)> {
    let g = conv_transpose_geom(input.shape(), weight.shape(), groups, pad)?;
    let mut gin = want_input.then(|| Tensor4::zeros(input.shape()));
    let mut gw = Tensor4::zeros(weight.shape());
    let mut gb = Tensor4::zeros([1, g.cout, 1, 1]);
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    for b in 0..g.n {
        for co in 0..g.cout {
            gb.data_mut()[co] += grad_out.plane(b, co).iter().sum::<f64>();
        }
        for ci in 0..g.cin {
            let grp = ci / g.cin_g;
            let i_base = (b * g.cin + ci) * g.h * g.w;
            for cl in 0..g.cout_g {
                let co = grp * g.cout_g + cl;
                let o_base = (b * g.cout + co) * g.hout * g.wout;
                for i in 0..g.kh {
                    let (ih_lo, ih_hi) = valid_range(i, g.pad.top, g.hout, g.h);
                    for j in 0..g.kw {
                        let widx = ((ci * g.cout_g + cl) * g.kh + i) * g.kw + j;
                        let wv = wt[widx];
                        let (iw_lo, iw_hi) = valid_range(j, g.pad.left, g.wout, g.w);
                        if iw_lo >= iw_hi {
                            continue;
                        }
                        let len = iw_hi - iw_lo;
                        let ow0 = iw_lo + j - g.pad.left;
                        let mut acc = 0.0;
                        for ih in ih_lo..ih_hi {
                            let oh = ih + i - g.pad.top;
                            let src0 = i_base + ih * g.w + iw_lo;
                            let gsrc = &go[o_base + oh * g.wout + ow0..][..len];
                            acc += gsrc
                                .iter()
                                .zip(&x[src0..src0 + len])
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                            if let Some(gin) = gin.as_mut() {
                                let dst = &mut gin.data_mut()[src0..src0 + len];
                                for (d, s) in dst.iter_mut().zip(gsrc) {
                                    *d += wv * s;
                                }
                            }
                        }
                        gw.data_mut()[widx] += acc;
                    }
                }
            }
        }
    }
    Ok((gin, gw, gb))
}

fn check_bias(bias: Option<&Tensor4>, cout: usize, op: &'static str) -> Result<()> {
    match bias {
        Some(b) if b.len() != cout => Err(Error::shape(
            op,
            format!("bias has {} entries, output depth is {cout}", b.len()),
        )),
        _ => Ok(()),
    }
}
