#include "nasbnn/nn_ops.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <mutex>

#include <cblas.h>

#include "nasbnn/parallel.hpp"

extern "C" void openblas_set_num_threads(int);

namespace nasbnn::nn {

namespace {

// BLAS runs single-threaded; parallelism lives at the image level.
void init_blas() {
    static std::once_flag flag;
    std::call_once(flag, [] { openblas_set_num_threads(1); });
}

thread_local std::vector<float> tl_col;
thread_local std::vector<float> tl_col2;

float* scratch(std::vector<float>& buf, int64_t n) {
    if (static_cast<int64_t>(buf.size()) < n) buf.resize(static_cast<size_t>(n));
    return buf.data();
}

// [C,H,W] -> [C*k*k, Ho*Wo], channel-major rows so each group's rows are
// contiguous.
void im2col(const float* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            float* col) {
    for (int c = 0; c < C; ++c) {
        const float* xc = x + static_cast<int64_t>(c) * H * W;
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                float* row = col + (static_cast<int64_t>(c) * k * k + kh * k + kw) *
                                       (static_cast<int64_t>(Ho) * Wo);
                for (int oh = 0; oh < Ho; ++oh) {
                    const int ih = oh * stride - pad + kh;
                    if (ih < 0 || ih >= H) {
                        std::memset(row + static_cast<int64_t>(oh) * Wo, 0,
                                    sizeof(float) * static_cast<size_t>(Wo));
                        continue;
                    }
                    const float* xr = xc + static_cast<int64_t>(ih) * W;
                    float* out = row + static_cast<int64_t>(oh) * Wo;
                    for (int ow = 0; ow < Wo; ++ow) {
                        const int iw = ow * stride - pad + kw;
                        out[ow] = (iw < 0 || iw >= W) ? 0.0f : xr[iw];
                    }
                }
            }
        }
    }
}

void col2im_accumulate(const float* col, int C, int H, int W, int k, int stride, int pad, int Ho,
                       int Wo, float* x) {
    for (int c = 0; c < C; ++c) {
        float* xc = x + static_cast<int64_t>(c) * H * W;
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                const float* row = col + (static_cast<int64_t>(c) * k * k + kh * k + kw) *
                                             (static_cast<int64_t>(Ho) * Wo);
                for (int oh = 0; oh < Ho; ++oh) {
                    const int ih = oh * stride - pad + kh;
                    if (ih < 0 || ih >= H) continue;
                    float* xr = xc + static_cast<int64_t>(ih) * W;
                    const float* in = row + static_cast<int64_t>(oh) * Wo;
                    for (int ow = 0; ow < Wo; ++ow) {
                        const int iw = ow * stride - pad + kw;
                        if (iw >= 0 && iw < W) xr[iw] += in[ow];
                    }
                }
            }
        }
    }
}

struct ConvDims {
    int N, C, H, W, Co, Cg, k, Ho, Wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const ConvSpec& s) {
    assert(x.ndim() == 4 && w.ndim() == 4);
    ConvDims d;
    d.N = static_cast<int>(x.dim(0));
    d.C = static_cast<int>(x.dim(1));
    d.H = static_cast<int>(x.dim(2));
    d.W = static_cast<int>(x.dim(3));
    d.Co = static_cast<int>(w.dim(0));
    d.Cg = static_cast<int>(w.dim(1));
    d.k = static_cast<int>(w.dim(2));
    assert(w.dim(3) == d.k);
    assert(d.C % s.groups == 0 && d.Co % s.groups == 0);
    assert(d.Cg == d.C / s.groups);
    d.Ho = conv_out_size(d.H, d.k, s.stride, s.pad);
    d.Wo = conv_out_size(d.W, d.k, s.stride, s.pad);
    return d;
}

}  // namespace

int conv_out_size(int size, int k, int stride, int pad) {
    return (size + 2 * pad - k) / stride + 1;
}

void conv2d_forward(const Tensor& x, const Tensor& w, const ConvSpec& spec, Tensor& y) {
    init_blas();
    const ConvDims d = conv_dims(x, w, spec);
    if (!y.same_shape(Tensor({d.N, d.Co, d.Ho, d.Wo})))
        y = Tensor({d.N, d.Co, d.Ho, d.Wo});
    const bool direct = d.k == 1 && spec.stride == 1 && spec.pad == 0;
    const int64_t map = static_cast<int64_t>(d.Ho) * d.Wo;
    const int K = d.Cg * d.k * d.k;
    parallel_for(d.N, [&](int64_t n) {
        const float* xn = x.data() + n * d.C * d.H * d.W;
        float* yn = y.data() + n * d.Co * map;
        const float* col = xn;
        if (!direct) {
            float* buf = scratch(tl_col, static_cast<int64_t>(d.C) * d.k * d.k * map);
            im2col(xn, d.C, d.H, d.W, d.k, spec.stride, spec.pad, d.Ho, d.Wo, buf);
            col = buf;
        }
        const int cog = d.Co / spec.groups;
        for (int g = 0; g < spec.groups; ++g) {
            cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, cog, static_cast<int>(map), K,
                        1.0f, w.data() + static_cast<int64_t>(g) * cog * K, K,
                        col + static_cast<int64_t>(g) * K * map, static_cast<int>(map), 0.0f,
                        yn + static_cast<int64_t>(g) * cog * map, static_cast<int>(map));
        }
    });
}

void conv2d_backward_input(const Tensor& dy, const Tensor& w, const ConvSpec& spec, Tensor& dx) {
    init_blas();
    assert(dx.ndim() == 4);
    const ConvDims d = conv_dims(dx, w, spec);
    assert(dy.dim(0) == d.N && dy.dim(1) == d.Co && dy.dim(2) == d.Ho && dy.dim(3) == d.Wo);
    const bool direct = d.k == 1 && spec.stride == 1 && spec.pad == 0;
    const int64_t map = static_cast<int64_t>(d.Ho) * d.Wo;
    const int K = d.Cg * d.k * d.k;
    const int cog = d.Co / spec.groups;
    parallel_for(d.N, [&](int64_t n) {
        const float* dyn = dy.data() + n * d.Co * map;
        float* dxn = dx.data() + n * d.C * d.H * d.W;
        float* col = direct ? dxn : scratch(tl_col, static_cast<int64_t>(d.C) * d.k * d.k * map);
        for (int g = 0; g < spec.groups; ++g) {
            cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K, static_cast<int>(map), cog,
                        1.0f, w.data() + static_cast<int64_t>(g) * cog * K, K,
                        dyn + static_cast<int64_t>(g) * cog * map, static_cast<int>(map), 0.0f,
                        col + static_cast<int64_t>(g) * K * map, static_cast<int>(map));
        }
        if (!direct) {
            std::memset(dxn, 0, sizeof(float) * static_cast<size_t>(d.C) * d.H * d.W);
            col2im_accumulate(col, d.C, d.H, d.W, d.k, spec.stride, spec.pad, d.Ho, d.Wo, dxn);
        }
    });
}

void conv2d_backward_weight(const Tensor& dy, const Tensor& x, const ConvSpec& spec, Tensor& dw) {
    init_blas();
    const ConvDims d = conv_dims(x, dw, spec);
    assert(dy.dim(0) == d.N && dy.dim(1) == d.Co && dy.dim(2) == d.Ho && dy.dim(3) == d.Wo);
    const bool direct = d.k == 1 && spec.stride == 1 && spec.pad == 0;
    const int64_t map = static_cast<int64_t>(d.Ho) * d.Wo;
    const int K = d.Cg * d.k * d.k;
    const int cog = d.Co / spec.groups;
    const int64_t chunk = 8;
    const int64_t chunks = num_chunks(d.N, chunk);
    std::vector<std::vector<float>> partial(static_cast<size_t>(chunks));
    parallel_chunks(d.N, chunk, [&](int64_t c, int64_t begin, int64_t end) {
        auto& acc = partial[static_cast<size_t>(c)];
        acc.assign(static_cast<size_t>(dw.numel()), 0.0f);
        for (int64_t n = begin; n < end; ++n) {
            const float* xn = x.data() + n * d.C * d.H * d.W;
            const float* dyn = dy.data() + n * d.Co * map;
            const float* col = xn;
            if (!direct) {
                float* buf = scratch(tl_col2, static_cast<int64_t>(d.C) * d.k * d.k * map);
                im2col(xn, d.C, d.H, d.W, d.k, spec.stride, spec.pad, d.Ho, d.Wo, buf);
                col = buf;
            }
            for (int g = 0; g < spec.groups; ++g) {
                cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, cog, K, static_cast<int>(map),
                            1.0f, dyn + static_cast<int64_t>(g) * cog * map, static_cast<int>(map),
                            col + static_cast<int64_t>(g) * K * map, static_cast<int>(map), 1.0f,
                            acc.data() + static_cast<int64_t>(g) * cog * K, K);
            }
        }
    });
    float* out = dw.data();
    for (const auto& acc : partial)
        for (int64_t i = 0; i < dw.numel(); ++i) out[i] += acc[static_cast<size_t>(i)];
}

void bn_stats(const Tensor& x, std::vector<double>& mean, std::vector<double>& var) {
    const int N = static_cast<int>(x.dim(0));
    const int C = static_cast<int>(x.dim(1));
    const int64_t map = x.numel() / (static_cast<int64_t>(N) * C);
    mean.assign(static_cast<size_t>(C), 0.0);
    var.assign(static_cast<size_t>(C), 0.0);
    std::vector<double> psum(static_cast<size_t>(N) * C, 0.0);
    std::vector<double> psq(static_cast<size_t>(N) * C, 0.0);
    parallel_for(N, [&](int64_t n) {
        for (int c = 0; c < C; ++c) {
            const float* p = x.data() + (n * C + c) * map;
            double s = 0.0, q = 0.0;
            for (int64_t i = 0; i < map; ++i) {
                s += p[i];
                q += static_cast<double>(p[i]) * p[i];
            }
            psum[static_cast<size_t>(n * C + c)] = s;
            psq[static_cast<size_t>(n * C + c)] = q;
        }
    });
    const double count = static_cast<double>(N) * static_cast<double>(map);
    for (int c = 0; c < C; ++c) {
        double s = 0.0, q = 0.0;
        for (int n = 0; n < N; ++n) {
            s += psum[static_cast<size_t>(n) * C + c];
            q += psq[static_cast<size_t>(n) * C + c];
        }
        mean[static_cast<size_t>(c)] = s / count;
        var[static_cast<size_t>(c)] = std::max(0.0, q / count - (s / count) * (s / count));
    }
}

void bn_forward(const Tensor& x, const float* gamma, const float* beta, const double* mean,
                const double* var, double eps, Tensor& y, Tensor* xhat) {
    const int N = static_cast<int>(x.dim(0));
    const int C = static_cast<int>(x.dim(1));
    const int64_t map = x.numel() / (static_cast<int64_t>(N) * C);
    if (!y.same_shape(x)) y = Tensor(x.shape());
    if (xhat && !xhat->same_shape(x)) *xhat = Tensor(x.shape());
    parallel_for(N, [&](int64_t n) {
        for (int c = 0; c < C; ++c) {
            const double inv = 1.0 / std::sqrt(var[c] + eps);
            const float m = static_cast<float>(mean[c]);
            const float iv = static_cast<float>(inv);
            const float g = gamma[c], b = beta[c];
            const float* px = x.data() + (n * C + c) * map;
            float* py = y.data() + (n * C + c) * map;
            float* ph = xhat ? xhat->data() + (n * C + c) * map : nullptr;
            for (int64_t i = 0; i < map; ++i) {
                const float h = (px[i] - m) * iv;
                if (ph) ph[i] = h;
                py[i] = g * h + b;
            }
        }
    });
}

void bn_backward(const Tensor& xhat, const float* gamma, const double* var, double eps,
                 const Tensor& dy, Tensor& dx, float* dgamma, float* dbeta) {
    const int N = static_cast<int>(xhat.dim(0));
    const int C = static_cast<int>(xhat.dim(1));
    const int64_t map = xhat.numel() / (static_cast<int64_t>(N) * C);
    if (!dx.same_shape(xhat)) dx = Tensor(xhat.shape());
    const double count = static_cast<double>(N) * static_cast<double>(map);
    // per-channel sums of dy and dy*xhat (accumulated deterministically)
    std::vector<double> sdy(static_cast<size_t>(C), 0.0), sdyh(static_cast<size_t>(C), 0.0);
    std::vector<double> p1(static_cast<size_t>(N) * C, 0.0), p2(static_cast<size_t>(N) * C, 0.0);
    parallel_for(N, [&](int64_t n) {
        for (int c = 0; c < C; ++c) {
            const float* pdy = dy.data() + (n * C + c) * map;
            const float* ph = xhat.data() + (n * C + c) * map;
            double a = 0.0, b = 0.0;
            for (int64_t i = 0; i < map; ++i) {
                a += pdy[i];
                b += static_cast<double>(pdy[i]) * ph[i];
            }
            p1[static_cast<size_t>(n * C + c)] = a;
            p2[static_cast<size_t>(n * C + c)] = b;
        }
    });
    for (int c = 0; c < C; ++c) {
        for (int n = 0; n < N; ++n) {
            sdy[static_cast<size_t>(c)] += p1[static_cast<size_t>(n) * C + c];
            sdyh[static_cast<size_t>(c)] += p2[static_cast<size_t>(n) * C + c];
        }
        if (dbeta) dbeta[c] += static_cast<float>(sdy[static_cast<size_t>(c)]);
        if (dgamma) dgamma[c] += static_cast<float>(sdyh[static_cast<size_t>(c)]);
    }
    parallel_for(N, [&](int64_t n) {
        for (int c = 0; c < C; ++c) {
            const double inv = 1.0 / std::sqrt(var[c] + eps);
            const double g = gamma[c];
            const double mdy = sdy[static_cast<size_t>(c)] / count;
            const double mdyh = sdyh[static_cast<size_t>(c)] / count;
            const float* pdy = dy.data() + (n * C + c) * map;
            const float* ph = xhat.data() + (n * C + c) * map;
            float* pdx = dx.data() + (n * C + c) * map;
            for (int64_t i = 0; i < map; ++i)
                pdx[i] = static_cast<float>(g * inv * (pdy[i] - mdy - ph[i] * mdyh));
        }
    });
}

void avgpool2x2_forward(const Tensor& x, Tensor& y) {
    const int N = static_cast<int>(x.dim(0));
    const int C = static_cast<int>(x.dim(1));
    const int H = static_cast<int>(x.dim(2));
    const int W = static_cast<int>(x.dim(3));
    const int Ho = (H + 1) / 2, Wo = (W + 1) / 2;
    if (!y.same_shape(Tensor({N, C, Ho, Wo}))) y = Tensor({N, C, Ho, Wo});
    parallel_for(static_cast<int64_t>(N) * C, [&](int64_t nc) {
        const float* px = x.data() + nc * H * W;
        float* py = y.data() + nc * Ho * Wo;
        for (int oh = 0; oh < Ho; ++oh) {
            for (int ow = 0; ow < Wo; ++ow) {
                double s = 0.0;
                int cnt = 0;
                for (int dh = 0; dh < 2; ++dh) {
                    for (int dw = 0; dw < 2; ++dw) {
                        const int ih = oh * 2 + dh, iw = ow * 2 + dw;
                        if (ih < H && iw < W) {
                            s += px[static_cast<int64_t>(ih) * W + iw];
                            ++cnt;
                        }
                    }
                }
                py[static_cast<int64_t>(oh) * Wo + ow] = static_cast<float>(s / cnt);
            }
        }
    });
}

void avgpool2x2_backward(const Tensor& dy, int in_h, int in_w, Tensor& dx) {
    const int N = static_cast<int>(dy.dim(0));
    const int C = static_cast<int>(dy.dim(1));
    const int Ho = static_cast<int>(dy.dim(2));
    const int Wo = static_cast<int>(dy.dim(3));
    if (!dx.same_shape(Tensor({N, C, in_h, in_w}))) dx = Tensor({N, C, in_h, in_w});
    dx.zero();
    parallel_for(static_cast<int64_t>(N) * C, [&](int64_t nc) {
        const float* pdy = dy.data() + nc * Ho * Wo;
        float* pdx = dx.data() + nc * in_h * in_w;
        for (int oh = 0; oh < Ho; ++oh) {
            for (int ow = 0; ow < Wo; ++ow) {
                int cnt = 0;
                for (int dh = 0; dh < 2; ++dh)
                    for (int dw = 0; dw < 2; ++dw)
                        if (oh * 2 + dh < in_h && ow * 2 + dw < in_w) ++cnt;
                const float v = pdy[static_cast<int64_t>(oh) * Wo + ow] / static_cast<float>(cnt);
                for (int dh = 0; dh < 2; ++dh) {
                    for (int dw = 0; dw < 2; ++dw) {
                        const int ih = oh * 2 + dh, iw = ow * 2 + dw;
                        if (ih < in_h && iw < in_w) pdx[static_cast<int64_t>(ih) * in_w + iw] += v;
                    }
                }
            }
        }
    });
}

void global_avgpool_forward(const Tensor& x, Tensor& y) {
    const int N = static_cast<int>(x.dim(0));
    const int C = static_cast<int>(x.dim(1));
    const int64_t map = x.numel() / (static_cast<int64_t>(N) * C);
    if (!y.same_shape(Tensor({N, C}))) y = Tensor({N, C});
    parallel_for(N, [&](int64_t n) {
        for (int c = 0; c < C; ++c) {
            const float* p = x.data() + (n * C + c) * map;
            double s = 0.0;
            for (int64_t i = 0; i < map; ++i) s += p[i];
            y.data()[n * C + c] = static_cast<float>(s / static_cast<double>(map));
        }
    });
}

void global_avgpool_backward(const Tensor& dy, int in_h, int in_w, Tensor& dx) {
    const int N = static_cast<int>(dy.dim(0));
    const int C = static_cast<int>(dy.dim(1));
    const int64_t map = static_cast<int64_t>(in_h) * in_w;
    if (!dx.same_shape(Tensor({N, C, in_h, in_w}))) dx = Tensor({N, C, in_h, in_w});
    parallel_for(N, [&](int64_t n) {
        for (int c = 0; c < C; ++c) {
            const float v = dy.data()[n * C + c] / static_cast<float>(map);
            float* p = dx.data() + (n * C + c) * map;
            for (int64_t i = 0; i < map; ++i) p[i] = v;
        }
    });
}

void linear_forward(const Tensor& x, const float* w, int ldw, const float* bias, int in_dim,
                    int out_dim, Tensor& y) {
    init_blas();
    const int N = static_cast<int>(x.dim(0));
    if (!y.same_shape(Tensor({N, out_dim}))) y = Tensor({N, out_dim});
    // y = x * w^T
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, N, out_dim, in_dim, 1.0f, x.data(),
                in_dim, w, ldw, 0.0f, y.data(), out_dim);
    if (bias)
        for (int n = 0; n < N; ++n)
            for (int o = 0; o < out_dim; ++o) y.data()[static_cast<int64_t>(n) * out_dim + o] += bias[o];
}

void linear_backward(const Tensor& x, const float* w, int ldw, const Tensor& dy, int in_dim,
                     int out_dim, Tensor& dx, float* dw, int lddw, float* dbias) {
    init_blas();
    const int N = static_cast<int>(x.dim(0));
    if (!dx.same_shape(Tensor({N, in_dim}))) dx = Tensor({N, in_dim});
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, N, in_dim, out_dim, 1.0f, dy.data(),
                out_dim, w, ldw, 0.0f, dx.data(), in_dim);
    if (dw)
        cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, out_dim, in_dim, N, 1.0f, dy.data(),
                    out_dim, x.data(), in_dim, 1.0f, dw, lddw);
    if (dbias)
        for (int n = 0; n < N; ++n)
            for (int o = 0; o < out_dim; ++o) dbias[o] += dy.data()[static_cast<int64_t>(n) * out_dim + o];
}

namespace {

// Row-wise softmax with double accumulation.
void softmax_row(const float* logits, int C, double* out) {
    double mx = logits[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(logits[c]));
    double denom = 0.0;
    for (int c = 0; c < C; ++c) {
        out[c] = std::exp(static_cast<double>(logits[c]) - mx);
        denom += out[c];
    }
    for (int c = 0; c < C; ++c) out[c] /= denom;
}

}  // namespace

double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* dlogits,
                             Tensor* probs) {
    const int N = static_cast<int>(logits.dim(0));
    const int C = static_cast<int>(logits.dim(1));
    assert(static_cast<int>(labels.size()) == N);
    if (dlogits && !dlogits->same_shape(logits)) *dlogits = Tensor(logits.shape());
    if (probs && !probs->same_shape(logits)) *probs = Tensor(logits.shape());
    double loss = 0.0;
    std::vector<double> p(static_cast<size_t>(C));
    for (int n = 0; n < N; ++n) {
        softmax_row(logits.data() + static_cast<int64_t>(n) * C, C, p.data());
        const int y = labels[static_cast<size_t>(n)];
        assert(y >= 0 && y < C);
        loss -= std::log(std::max(p[static_cast<size_t>(y)], 1e-300));
        for (int c = 0; c < C; ++c) {
            if (probs) probs->data()[static_cast<int64_t>(n) * C + c] = static_cast<float>(p[static_cast<size_t>(c)]);
            if (dlogits)
                dlogits->data()[static_cast<int64_t>(n) * C + c] =
                    static_cast<float>((p[static_cast<size_t>(c)] - (c == y ? 1.0 : 0.0)) / N);
        }
    }
    return loss / N;
}

double kl_teacher_student(const Tensor& teacher_probs, const Tensor& student_logits,
                          Tensor* dlogits) {
    assert(teacher_probs.same_shape(student_logits));
    const int N = static_cast<int>(student_logits.dim(0));
    const int C = static_cast<int>(student_logits.dim(1));
    if (dlogits && !dlogits->same_shape(student_logits)) *dlogits = Tensor(student_logits.shape());
    double kl = 0.0;
    std::vector<double> ps(static_cast<size_t>(C));
    for (int n = 0; n < N; ++n) {
        softmax_row(student_logits.data() + static_cast<int64_t>(n) * C, C, ps.data());
        for (int c = 0; c < C; ++c) {
            const double pt = teacher_probs.data()[static_cast<int64_t>(n) * C + c];
            if (pt > 0.0) kl += pt * (std::log(pt) - std::log(std::max(ps[static_cast<size_t>(c)], 1e-300)));
            if (dlogits)
                dlogits->data()[static_cast<int64_t>(n) * C + c] =
                    static_cast<float>((ps[static_cast<size_t>(c)] - pt) / N);
        }
    }
    // tiny negative values are rounding noise; KL is nonnegative
    return std::max(0.0, kl / N);
}

double top1_accuracy(const Tensor& logits, const std::vector<int>& labels) {
    const int N = static_cast<int>(logits.dim(0));
    const int C = static_cast<int>(logits.dim(1));
    int hits = 0;
    for (int n = 0; n < N; ++n) {
        const float* row = logits.data() + static_cast<int64_t>(n) * C;
        int best = 0;
        for (int c = 1; c < C; ++c)
            if (row[c] > row[best]) best = c;
        if (best == labels[static_cast<size_t>(n)]) ++hits;
    }
    return static_cast<double>(hits) / N;
}

}  // namespace nasbnn::nn
