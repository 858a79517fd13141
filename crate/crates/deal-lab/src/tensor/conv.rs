//! Raw NCHW convolution / pooling kernels on flat `f64` slices.
//!
//! Inner loops are arranged so the x-axis traversal is contiguous for both
//! input and output, which lets the compiler vectorize the stride-1 case
//! (the only stride the models in this crate use is 1; downsampling is done
//! by pooling, upsampling by nearest-neighbor).

/// Output spatial size of a convolution along one axis.
pub fn conv_out_len(in_len: usize, k: usize, stride: usize, pad: usize, dilation: usize) -> Option<usize> {
    let eff_k = dilation * (k - 1) + 1;
    let padded = in_len + 2 * pad;
    if padded < eff_k {
        return None;
    }
    Some((padded - eff_k) / stride + 1)
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    input: &[f64],
    kernel: &[f64],
    out: &mut [f64],
    n: usize,
    cin: usize,
    ih: usize,
    iw: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dilation: usize,
    oh: usize,
    ow: usize,
) {
    for b in 0..n {
        for o in 0..cout {
            let out_base = (b * cout + o) * oh * ow;
            for i in 0..cin {
                let in_base = (b * cin + i) * ih * iw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let w = kernel[((o * cin + i) * kh + ky) * kw + kx];
                        if w == 0.0 {
                            continue;
                        }
                        let off_y = (ky * dilation) as isize - pad as isize;
                        let off_x = (kx * dilation) as isize - pad as isize;
                        for y in 0..oh {
                            let iy = y as isize * stride as isize + off_y;
                            if iy < 0 || iy >= ih as isize {
                                continue;
                            }
                            let in_row = in_base + iy as usize * iw;
                            let out_row = out_base + y * ow;
                            if stride == 1 {
                                // x + off_x in [0, iw)
                                let x_lo = (-off_x).max(0) as usize;
                                let x_hi = ((iw as isize - off_x).min(ow as isize)).max(0) as usize;
                                if x_lo >= x_hi {
                                    continue;
                                }
                                let base = (in_row as isize + off_x) as isize;
                                let src = &input[(base + x_lo as isize) as usize
                                    ..(base + x_hi as isize) as usize];
                                let dst = &mut out[out_row + x_lo..out_row + x_hi];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += w * s;
                                }
                            } else {
                                for x in 0..ow {
                                    let ix = x as isize * stride as isize + off_x;
                                    if ix < 0 || ix >= iw as isize {
                                        continue;
                                    }
                                    out[out_row + x] += w * input[in_row + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the convolution input.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_input(
    grad_out: &[f64],
    kernel: &[f64],
    grad_in: &mut [f64],
    n: usize,
    cin: usize,
    ih: usize,
    iw: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dilation: usize,
    oh: usize,
    ow: usize,
) {
    for b in 0..n {
        for o in 0..cout {
            let go_base = (b * cout + o) * oh * ow;
            for i in 0..cin {
                let gi_base = (b * cin + i) * ih * iw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let w = kernel[((o * cin + i) * kh + ky) * kw + kx];
                        if w == 0.0 {
                            continue;
                        }
                        let off_y = (ky * dilation) as isize - pad as isize;
                        let off_x = (kx * dilation) as isize - pad as isize;
                        for y in 0..oh {
                            let iy = y as isize * stride as isize + off_y;
                            if iy < 0 || iy >= ih as isize {
                                continue;
                            }
                            let gi_row = gi_base + iy as usize * iw;
                            let go_row = go_base + y * ow;
                            if stride == 1 {
                                let x_lo = (-off_x).max(0) as usize;
                                let x_hi = ((iw as isize - off_x).min(ow as isize)).max(0) as usize;
                                if x_lo >= x_hi {
                                    continue;
                                }
                                let base = gi_row as isize + off_x;
                                let src = &grad_out[go_row + x_lo..go_row + x_hi];
                                let dst = &mut grad_in[(base + x_lo as isize) as usize
                                    ..(base + x_hi as isize) as usize];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += w * s;
                                }
                            } else {
                                for x in 0..ow {
                                    let ix = x as isize * stride as isize + off_x;
                                    if ix < 0 || ix >= iw as isize {
                                        continue;
                                    }
                                    grad_in[gi_row + ix as usize] += w * grad_out[go_row + x];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the convolution kernel.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_kernel(
    grad_out: &[f64],
    input: &[f64],
    grad_kernel: &mut [f64],
    n: usize,
    cin: usize,
    ih: usize,
    iw: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dilation: usize,
    oh: usize,
    ow: usize,
) {
    for b in 0..n {
        for o in 0..cout {
            let go_base = (b * cout + o) * oh * ow;
            for i in 0..cin {
                let in_base = (b * cin + i) * ih * iw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let off_y = (ky * dilation) as isize - pad as isize;
                        let off_x = (kx * dilation) as isize - pad as isize;
                        let mut acc = 0.0;
                        for y in 0..oh {
                            let iy = y as isize * stride as isize + off_y;
                            if iy < 0 || iy >= ih as isize {
                                continue;
                            }
                            let in_row = in_base + iy as usize * iw;
                            let go_row = go_base + y * ow;
                            if stride == 1 {
                                let x_lo = (-off_x).max(0) as usize;
                                let x_hi = ((iw as isize - off_x).min(ow as isize)).max(0) as usize;
                                if x_lo >= x_hi {
                                    continue;
                                }
                                let base = in_row as isize + off_x;
                                let a = &grad_out[go_row + x_lo..go_row + x_hi];
                                let b2 = &input[(base + x_lo as isize) as usize
                                    ..(base + x_hi as isize) as usize];
                                for (u, v) in a.iter().zip(b2) {
                                    acc += u * v;
                                }
                            } else {
                                for x in 0..ow {
                                    let ix = x as isize * stride as isize + off_x;
                                    if ix < 0 || ix >= iw as isize {
                                        continue;
                                    }
                                    acc += grad_out[go_row + x] * input[in_row + ix as usize];
                                }
                            }
                        }
                        grad_kernel[((o * cin + i) * kh + ky) * kw + kx] += acc;
                    }
                }
            }
        }
    }
}

/// 2x2 max pooling with stride 2. Returns flat argmax indices (into the
/// input slice) used for routing gradients.
pub fn max_pool2d_forward(
    input: &[f64],
    n: usize,
    c: usize,
    ih: usize,
    iw: usize,
) -> (Vec<f64>, Vec<usize>, usize, usize) {
    let oh = ih / 2;
    let ow = iw / 2;
    let mut out = vec![0.0; n * c * oh * ow];
    let mut arg = vec![0usize; n * c * oh * ow];
    for bc in 0..n * c {
        let in_base = bc * ih * iw;
        let out_base = bc * oh * ow;
        for y in 0..oh {
            for x in 0..ow {
                let i00 = in_base + (2 * y) * iw + 2 * x;
                let mut best = i00;
                for &cand in &[i00 + 1, i00 + iw, i00 + iw + 1] {
                    if input[cand] > input[best] {
                        best = cand;
                    }
                }
                out[out_base + y * ow + x] = input[best];
                arg[out_base + y * ow + x] = best;
            }
        }
    }
    (out, arg, oh, ow)
}

/// Nearest-neighbor upsampling by an integer factor.
pub fn upsample_nearest(input: &[f64], n: usize, c: usize, ih: usize, iw: usize, f: usize) -> Vec<f64> {
    let oh = ih * f;
    let ow = iw * f;
    let mut out = vec![0.0; n * c * oh * ow];
    for bc in 0..n * c {
        let in_base = bc * ih * iw;
        let out_base = bc * oh * ow;
        for y in 0..oh {
            let src_row = in_base + (y / f) * iw;
            let dst_row = out_base + y * ow;
            for x in 0..ow {
                out[dst_row + x] = input[src_row + x / f];
            }
        }
    }
    out
}

/// Bilinear upsampling of a single-channel H×W map to a target size
/// (align-corners convention). Used for heatmaps, not autograd.
pub fn upsample_bilinear(input: &[f64], ih: usize, iw: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut out = vec![0.0; oh * ow];
    let sy = if oh > 1 { (ih - 1) as f64 / (oh - 1) as f64 } else { 0.0 };
    let sx = if ow > 1 { (iw - 1) as f64 / (ow - 1) as f64 } else { 0.0 };
    for y in 0..oh {
        let fy = y as f64 * sy;
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(ih - 1);
        let wy = fy - y0 as f64;
        for x in 0..ow {
            let fx = x as f64 * sx;
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(iw - 1);
            let wx = fx - x0 as f64;
            let v = input[y0 * iw + x0] * (1.0 - wy) * (1.0 - wx)
                + input[y0 * iw + x1] * (1.0 - wy) * wx
                + input[y1 * iw + x0] * wy * (1.0 - wx)
                + input[y1 * iw + x1] * wy * wx;
            out[y * ow + x] = v;
        }
    }
    out
}
