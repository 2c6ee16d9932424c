#pragma once

#include <cblas.h>

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "srforge/tensor.hpp"

namespace srforge::nn {

namespace detail {

inline void dgemm_rm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                     const double* a, int lda, const double* b, int ldb, double beta,
                     double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c,
                ldc);
}

/// Expand one sample (C,H,W) into kh*kw*C patch rows of a column matrix with
/// row stride `ld`, starting at column `col_offset` (batched layout).
inline void im2col(const double* x, int c_in, int h, int w, int kh, int kw, int stride, int pad,
                   int oh, int ow, double* col, std::size_t ld, std::size_t col_offset) {
    const std::size_t plane = std::size_t(h) * w;
    for (int c = 0; c < c_in; ++c) {
        const double* src = x + c * plane;
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                double* dst =
                    col + (std::size_t(c * kh + i) * kw + j) * ld + col_offset;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + i;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + ow, 0.0);
                        dst += ow;
                        continue;
                    }
                    if (stride == 1) {
                        // Valid span: ox in [pad-j, w-1+pad-j]; copy it whole.
                        const int begin = std::clamp(pad - j, 0, ow);
                        const int end = std::clamp(w + pad - j, 0, ow);
                        std::fill(dst, dst + begin, 0.0);
                        std::copy(src + std::size_t(iy) * w + (begin - pad + j),
                                  src + std::size_t(iy) * w + (end - pad + j), dst + begin);
                        std::fill(dst + end, dst + ow, 0.0);
                        dst += ow;
                        continue;
                    }
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + j;
                        *dst++ = (ix >= 0 && ix < w) ? src[std::size_t(iy) * w + ix] : 0.0;
                    }
                }
            }
        }
    }
}

/// Scatter one sample's slice of a batched column-matrix gradient back onto
/// the input plane.
inline void col2im(const double* col, std::size_t ld, std::size_t col_offset, int c_in, int h,
                   int w, int kh, int kw, int stride, int pad, int oh, int ow, double* dx) {
    const std::size_t plane = std::size_t(h) * w;
    for (int c = 0; c < c_in; ++c) {
        double* dst = dx + c * plane;
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                const double* src =
                    col + (std::size_t(c * kh + i) * kw + j) * ld + col_offset;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + i;
                    if (iy >= 0 && iy < h) {
                        if (stride == 1) {
                            const int begin = std::clamp(pad - j, 0, ow);
                            const int end = std::clamp(w + pad - j, 0, ow);
                            double* row = dst + std::size_t(iy) * w + (begin - pad + j);
                            for (int ox = begin; ox < end; ++ox) row[ox - begin] += src[ox];
                        } else {
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = ox * stride - pad + j;
                                if (ix >= 0 && ix < w) dst[std::size_t(iy) * w + ix] += src[ox];
                            }
                        }
                    }
                    src += ow;
                }
            }
        }
    }
}

/// Reused scratch for the batched convolution GEMMs (single-writer graphs).
inline std::vector<double>& conv_scratch_a() {
    thread_local std::vector<double> buf;
    return buf;
}
inline std::vector<double>& conv_scratch_b() {
    thread_local std::vector<double> buf;
    return buf;
}

} // namespace detail

/// Cross-correlation convolution, NCHW. Output spatial size
/// floor((H + 2p - k) / s) + 1; gradients flow to input, weight and bias.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1,
                     int padding = 0) {
    require(x.rank() == 4, "nn", "conv2d input must be NCHW, got " + shape_str(x.shape()));
    require(w.rank() == 4, "nn", "conv2d weight must be OIKK, got " + shape_str(w.shape()));
    require(x.dim(1) == w.dim(1), "nn",
            "conv2d channel mismatch: input " + shape_str(x.shape()) + " weight " +
                shape_str(w.shape()));
    require(b.rank() == 1 && b.dim(0) == w.dim(0), "nn", "conv2d bias shape mismatch");
    require(stride >= 1 && padding >= 0, "nn", "conv2d stride/padding out of range");

    const int batch = int(x.dim(0)), c_in = int(x.dim(1)), h = int(x.dim(2)), wd = int(x.dim(3));
    const int c_out = int(w.dim(0)), kh = int(w.dim(2)), kw = int(w.dim(3));
    const int oh = (h + 2 * padding - kh) / stride + 1;
    const int ow = (wd + 2 * padding - kw) / stride + 1;
    require(oh >= 1 && ow >= 1, "nn", "conv2d output would be empty");

    const int k_dim = c_in * kh * kw;
    const int p_dim = oh * ow;
    const std::size_t np = std::size_t(batch) * p_dim;

    // One GEMM over the whole batch: columns of all samples side by side.
    auto& col_all = detail::conv_scratch_a();
    auto& y_all = detail::conv_scratch_b();
    col_all.resize(std::size_t(k_dim) * np);
    y_all.resize(std::size_t(c_out) * np);
    for (int n = 0; n < batch; ++n)
        detail::im2col(x.data().data() + std::size_t(n) * c_in * h * wd, c_in, h, wd, kh, kw,
                       stride, padding, oh, ow, col_all.data(), np, std::size_t(n) * p_dim);
    detail::dgemm_rm(false, false, c_out, int(np), k_dim, 1.0, w.data().data(), k_dim,
                     col_all.data(), int(np), 0.0, y_all.data(), int(np));

    std::vector<double> out(std::size_t(batch) * c_out * p_dim);
    for (int o = 0; o < c_out; ++o) {
        const double bias = b.data()[std::size_t(o)];
        const double* row = y_all.data() + std::size_t(o) * np;
        for (int n = 0; n < batch; ++n) {
            double* dst = out.data() + (std::size_t(n) * c_out + o) * p_dim;
            const double* src = row + std::size_t(n) * p_dim;
            for (int p = 0; p < p_dim; ++p) dst[p] = src[p] + bias;
        }
    }

    return make_op({batch, c_out, oh, ow}, std::move(out), {x, w, b},
                   [=](Node& node) {
                       Node& px = *node.parents[0];
                       Node& pw = *node.parents[1];
                       Node& pb = *node.parents[2];
                       auto& buf_a = detail::conv_scratch_a(); // col_all, then dcol_all
                       auto& buf_b = detail::conv_scratch_b(); // dy_all
                       buf_a.resize(std::size_t(k_dim) * np);
                       buf_b.resize(std::size_t(c_out) * np);
                       // Gather dY into (c_out, batch*p) layout.
                       for (int o = 0; o < c_out; ++o) {
                           double* row = buf_b.data() + std::size_t(o) * np;
                           for (int n = 0; n < batch; ++n) {
                               const double* src =
                                   node.grad.data() + (std::size_t(n) * c_out + o) * p_dim;
                               std::copy(src, src + p_dim, row + std::size_t(n) * p_dim);
                           }
                       }
                       if (pb.requires_grad) {
                           pb.ensure_grad();
                           for (int o = 0; o < c_out; ++o) {
                               double s = 0.0;
                               const double* row = buf_b.data() + std::size_t(o) * np;
                               for (std::size_t p = 0; p < np; ++p) s += row[p];
                               pb.grad[std::size_t(o)] += s;
                           }
                       }
                       if (pw.requires_grad) {
                           pw.ensure_grad();
                           for (int n = 0; n < batch; ++n)
                               detail::im2col(px.value.data() + std::size_t(n) * c_in * h * wd,
                                              c_in, h, wd, kh, kw, stride, padding, oh, ow,
                                              buf_a.data(), np, std::size_t(n) * p_dim);
                           detail::dgemm_rm(false, true, c_out, k_dim, int(np), 1.0,
                                            buf_b.data(), int(np), buf_a.data(), int(np), 1.0,
                                            pw.grad.data(), k_dim);
                       }
                       if (px.requires_grad) {
                           px.ensure_grad();
                           detail::dgemm_rm(true, false, k_dim, int(np), c_out, 1.0,
                                            pw.value.data(), k_dim, buf_b.data(), int(np), 0.0,
                                            buf_a.data(), int(np));
                           for (int n = 0; n < batch; ++n)
                               detail::col2im(buf_a.data(), np, std::size_t(n) * p_dim, c_in, h,
                                              wd, kh, kw, stride, padding, oh, ow,
                                              px.grad.data() + std::size_t(n) * c_in * h * wd);
                       }
                   });
}

/// Affine map y = x w^T + b for x (N,F), w (O,F), b (O).
inline Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
    require(x.rank() == 2 && w.rank() == 2 && b.rank() == 1, "nn", "dense expects 2-D x/w, 1-D b");
    require(x.dim(1) == w.dim(1) && w.dim(0) == b.dim(0), "nn",
            "dense shape mismatch: x " + shape_str(x.shape()) + " w " + shape_str(w.shape()));
    const int n = int(x.dim(0)), f = int(x.dim(1)), o = int(w.dim(0));
    std::vector<double> out(std::size_t(n) * o);
    detail::dgemm_rm(false, true, n, o, f, 1.0, x.data().data(), f, w.data().data(), f, 0.0,
                     out.data(), o);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < o; ++j) out[std::size_t(i) * o + j] += b.data()[std::size_t(j)];
    return make_op({n, o}, std::move(out), {x, w, b}, [n, f, o](Node& node) {
        Node& px = *node.parents[0];
        Node& pw = *node.parents[1];
        Node& pb = *node.parents[2];
        if (px.requires_grad) {
            px.ensure_grad();
            detail::dgemm_rm(false, false, n, f, o, 1.0, node.grad.data(), o, pw.value.data(), f,
                             1.0, px.grad.data(), f);
        }
        if (pw.requires_grad) {
            pw.ensure_grad();
            detail::dgemm_rm(true, false, o, f, n, 1.0, node.grad.data(), o, px.value.data(), f,
                             1.0, pw.grad.data(), f);
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < o; ++j) pb.grad[std::size_t(j)] += node.grad[std::size_t(i) * o + j];
        }
    });
}

/// max(x, slope*x); derivative 1 at exactly 0.
inline Tensor leaky_relu(const Tensor& x, double slope = 0.2) {
    std::vector<double> v(x.data());
    for (double& e : v) e = e >= 0.0 ? e : slope * e;
    return make_op(x.shape(), std::move(v), {x}, [slope](Node& n) {
        Node& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            p.grad[i] += n.grad[i] * (p.value[i] >= 0.0 ? 1.0 : slope);
    });
}

inline Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0); }

/// Learnable per-channel slope; `a` has shape (C) matching dim 1 of x.
inline Tensor prelu(const Tensor& x, const Tensor& a) {
    require(x.rank() >= 2, "nn", "prelu expects a batched tensor");
    require(a.rank() == 1 && a.dim(0) == x.dim(1), "nn", "prelu slope must match channel count");
    const std::int64_t batch = x.dim(0), channels = x.dim(1);
    const std::int64_t inner = x.size() / (batch * channels);
    std::vector<double> v(x.data());
    for (std::int64_t n = 0; n < batch; ++n)
        for (std::int64_t c = 0; c < channels; ++c) {
            const double slope = a.data()[std::size_t(c)];
            double* row = v.data() + (n * channels + c) * inner;
            for (std::int64_t i = 0; i < inner; ++i)
                if (row[i] < 0.0) row[i] *= slope;
        }
    return make_op(x.shape(), std::move(v), {x, a}, [batch, channels, inner](Node& node) {
        Node& px = *node.parents[0];
        Node& pa = *node.parents[1];
        if (px.requires_grad) px.ensure_grad();
        if (pa.requires_grad) pa.ensure_grad();
        for (std::int64_t n = 0; n < batch; ++n)
            for (std::int64_t c = 0; c < channels; ++c) {
                const double slope = pa.value[std::size_t(c)];
                const std::size_t base = std::size_t((n * channels + c) * inner);
                double da = 0.0;
                for (std::int64_t i = 0; i < inner; ++i) {
                    const double xv = px.value[base + i];
                    const double g = node.grad[base + i];
                    if (px.requires_grad) px.grad[base + i] += g * (xv >= 0.0 ? 1.0 : slope);
                    if (xv < 0.0) da += g * xv;
                }
                if (pa.requires_grad) pa.grad[std::size_t(c)] += da;
            }
    });
}

/// Per-channel batch statistics (running buffers updated in train mode with
/// momentum 0.1, PyTorch convention: new = (1-m)*old + m*batch).
struct BatchNormBuffers {
    std::shared_ptr<std::vector<double>> running_mean;
    std::shared_ptr<std::vector<double>> running_var;
};

inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         BatchNormBuffers& buffers, bool train, double momentum = 0.1,
                         double eps = 1e-5) {
    require(x.rank() == 4, "nn", "batch_norm expects NCHW input");
    const std::int64_t batch = x.dim(0), channels = x.dim(1);
    const std::int64_t inner = x.dim(2) * x.dim(3);
    require(gamma.rank() == 1 && gamma.dim(0) == channels, "nn", "batch_norm gamma shape");
    require(beta.rank() == 1 && beta.dim(0) == channels, "nn", "batch_norm beta shape");
    require(!train || batch >= 2, "nn", "batch_norm train mode requires batch >= 2");

    const std::int64_t count = batch * inner;
    std::vector<double> mean(static_cast<std::size_t>(channels));
    std::vector<double> var(static_cast<std::size_t>(channels));
    if (train) {
        for (std::int64_t c = 0; c < channels; ++c) {
            double s = 0.0;
            for (std::int64_t n = 0; n < batch; ++n) {
                const double* row = x.data().data() + (n * channels + c) * inner;
                for (std::int64_t i = 0; i < inner; ++i) s += row[i];
            }
            const double m = s / double(count);
            double v = 0.0;
            for (std::int64_t n = 0; n < batch; ++n) {
                const double* row = x.data().data() + (n * channels + c) * inner;
                for (std::int64_t i = 0; i < inner; ++i) v += (row[i] - m) * (row[i] - m);
            }
            mean[std::size_t(c)] = m;
            var[std::size_t(c)] = v / double(count);
            (*buffers.running_mean)[std::size_t(c)] =
                (1.0 - momentum) * (*buffers.running_mean)[std::size_t(c)] + momentum * m;
            (*buffers.running_var)[std::size_t(c)] =
                (1.0 - momentum) * (*buffers.running_var)[std::size_t(c)] +
                momentum * (v / double(std::max<std::int64_t>(count - 1, 1)));
        }
    } else {
        mean = *buffers.running_mean;
        var = *buffers.running_var;
    }

    std::vector<double> inv_std(static_cast<std::size_t>(channels));
    for (std::int64_t c = 0; c < channels; ++c)
        inv_std[std::size_t(c)] = 1.0 / std::sqrt(var[std::size_t(c)] + eps);

    std::vector<double> out(x.data().size());
    auto xhat = std::make_shared<std::vector<double>>(x.data().size());
    for (std::int64_t n = 0; n < batch; ++n)
        for (std::int64_t c = 0; c < channels; ++c) {
            const double m = mean[std::size_t(c)], is = inv_std[std::size_t(c)];
            const double g = gamma.data()[std::size_t(c)], bt = beta.data()[std::size_t(c)];
            const std::size_t base = std::size_t((n * channels + c) * inner);
            for (std::int64_t i = 0; i < inner; ++i) {
                const double h = (x.data()[base + i] - m) * is;
                (*xhat)[base + i] = h;
                out[base + i] = g * h + bt;
            }
        }

    return make_op(x.shape(), std::move(out), {x, gamma, beta},
                   [batch, channels, inner, count, train, xhat, inv_std](Node& node) {
                       Node& px = *node.parents[0];
                       Node& pg = *node.parents[1];
                       Node& pb = *node.parents[2];
                       for (std::int64_t c = 0; c < channels; ++c) {
                           double sum_g = 0.0, sum_gh = 0.0;
                           for (std::int64_t n = 0; n < batch; ++n) {
                               const std::size_t base = std::size_t((n * channels + c) * inner);
                               for (std::int64_t i = 0; i < inner; ++i) {
                                   sum_g += node.grad[base + i];
                                   sum_gh += node.grad[base + i] * (*xhat)[base + i];
                               }
                           }
                           if (pg.requires_grad) {
                               pg.ensure_grad();
                               pg.grad[std::size_t(c)] += sum_gh;
                           }
                           if (pb.requires_grad) {
                               pb.ensure_grad();
                               pb.grad[std::size_t(c)] += sum_g;
                           }
                           if (px.requires_grad) {
                               px.ensure_grad();
                               const double g = pg.value[std::size_t(c)];
                               const double is = inv_std[std::size_t(c)];
                               const double mg = sum_g / double(count);
                               const double mgh = sum_gh / double(count);
                               for (std::int64_t n = 0; n < batch; ++n) {
                                   const std::size_t base =
                                       std::size_t((n * channels + c) * inner);
                                   for (std::int64_t i = 0; i < inner; ++i) {
                                       double dxhat = node.grad[base + i] * g;
                                       if (train)
                                           dxhat -= g * (mg + (*xhat)[base + i] * mgh);
                                       px.grad[base + i] += dxhat * is;
                                   }
                               }
                           }
                       }
                   });
}

/// Sub-pixel rearrangement (N, C*r^2, H, W) -> (N, C, H*r, W*r):
/// out[n,c,h*r+i,w*r+j] = in[n, c*r^2 + i*r + j, h, w].
inline Tensor pixel_shuffle(const Tensor& x, int r) {
    require(x.rank() == 4, "nn", "pixel_shuffle expects NCHW input");
    require(r >= 1, "nn", "pixel_shuffle factor must be >= 1");
    const std::int64_t batch = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
    require(c_in % (std::int64_t(r) * r) == 0, "nn",
            "pixel_shuffle: channels not divisible by r^2");
    const std::int64_t c_out = c_in / (std::int64_t(r) * r);
    const std::int64_t oh = h * r, ow = w * r;
    std::vector<double> out(x.data().size());
    const auto src_index = [=](std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t xx) {
        return ((n * c_in + c) * h + y) * w + xx;
    };
    for (std::int64_t n = 0; n < batch; ++n)
        for (std::int64_t c = 0; c < c_out; ++c)
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t xx = 0; xx < w; ++xx)
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < r; ++j)
                            out[((n * c_out + c) * oh + y * r + i) * ow + xx * r + j] =
                                x.data()[std::size_t(
                                    src_index(n, c * r * r + i * r + j, y, xx))];
    return make_op({batch, c_out, oh, ow}, std::move(out), {x},
                   [=](Node& node) {
                       Node& p = *node.parents[0];
                       p.ensure_grad();
                       for (std::int64_t n = 0; n < batch; ++n)
                           for (std::int64_t c = 0; c < c_out; ++c)
                               for (std::int64_t y = 0; y < h; ++y)
                                   for (std::int64_t xx = 0; xx < w; ++xx)
                                       for (int i = 0; i < r; ++i)
                                           for (int j = 0; j < r; ++j)
                                               p.grad[std::size_t(
                                                   src_index(n, c * r * r + i * r + j, y, xx))] +=
                                                   node.grad[((n * c_out + c) * oh + y * r + i) *
                                                                 ow +
                                                             xx * r + j];
                   });
}

/// Inverse of pixel_shuffle: (N, C, H*r, W*r) -> (N, C*r^2, H, W).
inline Tensor pixel_unshuffle(const Tensor& x, int r) {
    require(x.rank() == 4, "nn", "pixel_unshuffle expects NCHW input");
    require(x.dim(2) % r == 0 && x.dim(3) % r == 0, "nn",
            "pixel_unshuffle: spatial dims not divisible by r");
    const std::int64_t batch = x.dim(0), c_in = x.dim(1), oh = x.dim(2) / r, ow = x.dim(3) / r;
    const std::int64_t c_out = c_in * r * r;
    std::vector<double> out(x.data().size());
    for (std::int64_t n = 0; n < batch; ++n)
        for (std::int64_t c = 0; c < c_in; ++c)
            for (std::int64_t y = 0; y < oh; ++y)
                for (std::int64_t xx = 0; xx < ow; ++xx)
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < r; ++j)
                            out[((n * c_out + c * r * r + i * r + j) * oh + y) * ow + xx] =
                                x.data()[std::size_t(((n * c_in + c) * oh * r + y * r + i) * ow *
                                                         r +
                                                     xx * r + j)];
    return make_op({batch, c_out, oh, ow}, std::move(out), {x}, [=](Node& node) {
        Node& p = *node.parents[0];
        p.ensure_grad();
        for (std::int64_t n = 0; n < batch; ++n)
            for (std::int64_t c = 0; c < c_in; ++c)
                for (std::int64_t y = 0; y < oh; ++y)
                    for (std::int64_t xx = 0; xx < ow; ++xx)
                        for (int i = 0; i < r; ++i)
                            for (int j = 0; j < r; ++j)
                                p.grad[std::size_t(((n * c_in + c) * oh * r + y * r + i) * ow * r +
                                                   xx * r + j)] +=
                                    node.grad[((n * c_out + c * r * r + i * r + j) * oh + y) * ow +
                                              xx];
    });
}

/// 2x2 stride-2 max pooling; gradients route to the argmax tap.
inline Tensor max_pool2(const Tensor& x) {
    require(x.rank() == 4, "nn", "max_pool2 expects NCHW input");
    require(x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0, "nn",
            "max_pool2 expects even spatial dims");
    const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t oh = h / 2, ow = w / 2;
    std::vector<double> out(std::size_t(planes * oh * ow));
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
    for (std::int64_t p = 0; p < planes; ++p) {
        const double* src = x.data().data() + p * h * w;
        for (std::int64_t y = 0; y < oh; ++y)
            for (std::int64_t xx = 0; xx < ow; ++xx) {
                std::int64_t best = (2 * y) * w + 2 * xx;
                for (const std::int64_t cand :
                     {(2 * y) * w + 2 * xx + 1, (2 * y + 1) * w + 2 * xx,
                      (2 * y + 1) * w + 2 * xx + 1})
                    if (src[cand] > src[best]) best = cand;
                const std::size_t oi = std::size_t(p * oh * ow + y * ow + xx);
                out[oi] = src[best];
                (*argmax)[oi] = p * h * w + best;
            }
    }
    return make_op({x.dim(0), x.dim(1), oh, ow}, std::move(out), {x}, [argmax](Node& n) {
        Node& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            p.grad[std::size_t((*argmax)[i])] += n.grad[i];
    });
}

inline Tensor interpolate_nearest(const Tensor& x, int scale) {
    require(x.rank() == 4 && scale >= 1, "nn", "interpolate_nearest expects NCHW and scale >= 1");
    const std::int64_t batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t oh = h * scale, ow = w * scale;
    std::vector<double> out(std::size_t(batch * channels * oh * ow));
    for (std::int64_t nc = 0; nc < batch * channels; ++nc) {
        const double* src = x.data().data() + nc * h * w;
        double* dst = out.data() + nc * oh * ow;
        for (std::int64_t y = 0; y < oh; ++y)
            for (std::int64_t xx = 0; xx < ow; ++xx)
                dst[y * ow + xx] = src[(y / scale) * w + (xx / scale)];
    }
    return make_op({batch, channels, oh, ow}, std::move(out), {x}, [=](Node& node) {
        Node& p = *node.parents[0];
        p.ensure_grad();
        for (std::int64_t nc = 0; nc < batch * channels; ++nc) {
            const double* g = node.grad.data() + nc * oh * ow;
            double* dst = p.grad.data() + nc * h * w;
            for (std::int64_t y = 0; y < oh; ++y)
                for (std::int64_t xx = 0; xx < ow; ++xx)
                    dst[(y / scale) * w + (xx / scale)] += g[y * ow + xx];
        }
    });
}

/// Bilinear upsample by an integer factor, pixel-center aligned
/// (src = (dst + 0.5)/scale - 0.5, clamped at the borders).
inline Tensor interpolate_bilinear(const Tensor& x, int scale) {
    require(x.rank() == 4 && scale >= 1, "nn", "interpolate_bilinear expects NCHW and scale >= 1");
    const std::int64_t batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t oh = h * scale, ow = w * scale;

    struct Tap {
        std::int64_t i0, i1;
        double w0, w1;
    };
    auto make_taps = [scale](std::int64_t out_n, std::int64_t in_n) {
        std::vector<Tap> taps(static_cast<std::size_t>(out_n));
        for (std::int64_t o = 0; o < out_n; ++o) {
            double s = (o + 0.5) / scale - 0.5;
            s = std::clamp(s, 0.0, double(in_n - 1));
            const std::int64_t i0 = std::int64_t(std::floor(s));
            const std::int64_t i1 = std::min(i0 + 1, in_n - 1);
            const double f = s - double(i0);
            taps[std::size_t(o)] = {i0, i1, 1.0 - f, f};
        }
        return taps;
    };
    const auto ty = make_taps(oh, h);
    const auto tx = make_taps(ow, w);

    std::vector<double> out(std::size_t(batch * channels * oh * ow));
    for (std::int64_t nc = 0; nc < batch * channels; ++nc) {
        const double* src = x.data().data() + nc * h * w;
        double* dst = out.data() + nc * oh * ow;
        for (std::int64_t y = 0; y < oh; ++y) {
            const Tap& a = ty[std::size_t(y)];
            for (std::int64_t xx = 0; xx < ow; ++xx) {
                const Tap& bq = tx[std::size_t(xx)];
                dst[y * ow + xx] = a.w0 * (bq.w0 * src[a.i0 * w + bq.i0] + bq.w1 * src[a.i0 * w + bq.i1]) +
                                   a.w1 * (bq.w0 * src[a.i1 * w + bq.i0] + bq.w1 * src[a.i1 * w + bq.i1]);
            }
        }
    }
    return make_op({batch, channels, oh, ow}, std::move(out), {x},
                   [=](Node& node) {
                       Node& p = *node.parents[0];
                       p.ensure_grad();
                       for (std::int64_t nc = 0; nc < batch * channels; ++nc) {
                           const double* g = node.grad.data() + nc * oh * ow;
                           double* dst = p.grad.data() + nc * h * w;
                           for (std::int64_t y = 0; y < oh; ++y) {
                               const Tap& a = ty[std::size_t(y)];
                               for (std::int64_t xx = 0; xx < ow; ++xx) {
                                   const Tap& bq = tx[std::size_t(xx)];
                                   const double gv = g[y * ow + xx];
                                   dst[a.i0 * w + bq.i0] += a.w0 * bq.w0 * gv;
                                   dst[a.i0 * w + bq.i1] += a.w0 * bq.w1 * gv;
                                   dst[a.i1 * w + bq.i0] += a.w1 * bq.w0 * gv;
                                   dst[a.i1 * w + bq.i1] += a.w1 * bq.w1 * gv;
                               }
                           }
                       }
                   });
}

/// Divide a weight by its top singular value, estimated by power iteration
/// with a persistent left vector `u`. One iteration refreshes `u` per call
/// when update_u is set; eval-mode calls reuse the stored estimate. The
/// backward pass treats u and v as constants (the usual GAN practice).
inline Tensor spectral_normalize(const Tensor& w, std::shared_ptr<std::vector<double>> u_state,
                                 bool update_u, double eps = 1e-12) {
    require(w.rank() >= 2, "nn", "spectral_normalize expects rank >= 2 weight");
    const std::int64_t rows = w.dim(0);
    const std::int64_t cols = w.size() / rows;
    require(std::int64_t(u_state->size()) == rows, "nn", "spectral norm u state size mismatch");

    const double* wd = w.data().data();
    auto normalize_vec = [eps](std::vector<double>& v) {
        double norm = 0.0;
        for (const double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < eps) return false;
        for (double& x : v) x /= norm;
        return true;
    };

    std::vector<double> u = *u_state;
    std::vector<double> v(std::size_t(cols), 0.0);
    // v = normalize(W^T u); u = normalize(W v)
    for (std::int64_t j = 0; j < cols; ++j) {
        double s = 0.0;
        for (std::int64_t i = 0; i < rows; ++i) s += wd[i * cols + j] * u[std::size_t(i)];
        v[std::size_t(j)] = s;
    }
    const bool v_ok = normalize_vec(v);
    if (v_ok) {
        for (std::int64_t i = 0; i < rows; ++i) {
            double s = 0.0;
            for (std::int64_t j = 0; j < cols; ++j) s += wd[i * cols + j] * v[std::size_t(j)];
            u[std::size_t(i)] = s;
        }
        if (normalize_vec(u) && update_u) *u_state = u;
    }

    double sigma = 0.0;
    for (std::int64_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) s += wd[i * cols + j] * v[std::size_t(j)];
        sigma += u[std::size_t(i)] * s;
    }
    sigma = std::max(sigma, eps); // zero-weight floor

    std::vector<double> out(w.data());
    const double inv_sigma = 1.0 / sigma;
    for (double& x : out) x *= inv_sigma;

    auto u_c = std::make_shared<std::vector<double>>(u);
    auto v_c = std::make_shared<std::vector<double>>(v);
    return make_op(w.shape(), std::move(out), {w},
                   [rows, cols, sigma, u_c, v_c](Node& node) {
                       Node& p = *node.parents[0];
                       p.ensure_grad();
                       double g_dot_w = 0.0;
                       for (std::size_t i = 0; i < node.grad.size(); ++i)
                           g_dot_w += node.grad[i] * p.value[i];
                       const double coef = g_dot_w / (sigma * sigma);
                       const double inv_sigma = 1.0 / sigma;
                       for (std::int64_t i = 0; i < rows; ++i)
                           for (std::int64_t j = 0; j < cols; ++j)
                               p.grad[std::size_t(i * cols + j)] +=
                                   node.grad[std::size_t(i * cols + j)] * inv_sigma -
                                   coef * (*u_c)[std::size_t(i)] * (*v_c)[std::size_t(j)];
                   });
}

/// Estimate of the current top singular value (test/diagnostic hook).
inline double spectral_sigma(const Tensor& w, const std::vector<double>& u) {
    const std::int64_t rows = w.dim(0);
    const std::int64_t cols = w.size() / rows;
    const double* wd = w.data().data();
    std::vector<double> v(std::size_t(cols), 0.0);
    for (std::int64_t j = 0; j < cols; ++j) {
        double s = 0.0;
        for (std::int64_t i = 0; i < rows; ++i) s += wd[i * cols + j] * u[std::size_t(i)];
        v[std::size_t(j)] = s;
    }
    double vn = 0.0;
    for (const double x : v) vn += x * x;
    vn = std::sqrt(vn);
    if (vn < 1e-300) return 0.0;
    double sigma = 0.0;
    for (std::int64_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) s += wd[i * cols + j] * v[std::size_t(j)] / vn;
        sigma += u[std::size_t(i)] * s;
    }
    return sigma;
}

// ---- parameters, initialization, optimizer ----

struct Parameter {
    std::string name;
    Tensor tensor;
};

struct NamedBuffer {
    std::string name;
    std::shared_ptr<std::vector<double>> data;
};

/// Flat registry of trainable parameters and persistent buffers (running
/// statistics, power-iteration vectors). Names are unique paths.
class ParamRegistry {
public:
    Tensor add_parameter(const std::string& name, Tensor t) {
        require(!has(name), "nn", "duplicate parameter name: " + name);
        params_.push_back({name, t});
        return t;
    }

    std::shared_ptr<std::vector<double>> add_buffer(const std::string& name,
                                                    std::vector<double> init) {
        require(!has(name), "nn", "duplicate buffer name: " + name);
        auto data = std::make_shared<std::vector<double>>(std::move(init));
        buffers_.push_back({name, data});
        return data;
    }

    bool has(const std::string& name) const {
        for (const auto& p : params_)
            if (p.name == name) return true;
        for (const auto& b : buffers_)
            if (b.name == name) return true;
        return false;
    }

    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    std::vector<NamedBuffer>& buffers() { return buffers_; }
    const std::vector<NamedBuffer>& buffers() const { return buffers_; }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& p : params_) n += p.tensor.size();
        return n;
    }

private:
    std::vector<Parameter> params_;
    std::vector<NamedBuffer> buffers_;
};

/// Kaiming-uniform fan-in initialization; `gain_scale` shrinks residual-dense
/// weights (0.1 inside RRDBs).
inline Tensor kaiming_uniform(Rng& rng, Shape shape, std::int64_t fan_in, double gain_scale = 1.0) {
    const double bound = gain_scale * std::sqrt(6.0 / double(fan_in));
    std::vector<double> v(std::size_t(shape_size(shape)));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from_data(std::move(shape), std::move(v), true);
}

/// Adam with bias-corrected moments; beta1 = 0.90, beta2 = 0.99 and
/// epsilon = 1e-8.
class Adam {
public:
    explicit Adam(double beta1 = 0.90, double beta2 = 0.99, double epsilon = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

    std::int64_t step_count() const { return step_; }

    void step(std::vector<Parameter>& params, double lr) {
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(params[i].tensor.data().size(), 0.0);
                v_[i].assign(params[i].tensor.data().size(), 0.0);
            }
        }
        require(m_.size() == params.size(), "nn", "optimizer bound to a different parameter set");
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1_, double(step_));
        const double bc2 = 1.0 - std::pow(beta2_, double(step_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& value = params[i].tensor.data();
            auto& grad = params[i].tensor.grad();
            if (!all_finite(grad))
                fail("nn", "divergence: non-finite gradient in parameter " + params[i].name);
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t k = 0; k < value.size(); ++k) {
                m[k] = beta1_ * m[k] + (1.0 - beta1_) * grad[k];
                v[k] = beta2_ * v[k] + (1.0 - beta2_) * grad[k] * grad[k];
                const double mhat = m[k] / bc1;
                const double vhat = v[k] / bc2;
                value[k] -= lr * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    double beta1_, beta2_, eps_;
    std::int64_t step_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

} // namespace srforge::nn
