#include "nasbnn/binops.hpp"

#include <cassert>
#include <cmath>

#include "nasbnn/errors.hpp"
#include "nasbnn/parallel.hpp"

namespace nasbnn {

void sign_forward(const float* x, float* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] >= 0.0f ? 1.0f : -1.0f;
}

void sign_backward(const float* x, const float* dy, float* dx, int64_t n) {
    for (int64_t i = 0; i < n; ++i) dx[i] = (x[i] >= -1.0f && x[i] <= 1.0f) ? dy[i] : 0.0f;
}

template <typename T>
void weight_normalize(const T* w, int channels, int64_t per_channel, T* out) {
    for (int c = 0; c < channels; ++c) {
        const T* row = w + static_cast<int64_t>(c) * per_channel;
        T* o = out + static_cast<int64_t>(c) * per_channel;
        double s = 0.0, q = 0.0;
        for (int64_t i = 0; i < per_channel; ++i) {
            s += row[i];
            q += static_cast<double>(row[i]) * row[i];
        }
        const double mean = s / static_cast<double>(per_channel);
        const double var = std::max(0.0, q / static_cast<double>(per_channel) - mean * mean);
        const double inv = 1.0 / std::sqrt(var + kWeightNormEps);
        for (int64_t i = 0; i < per_channel; ++i)
            o[i] = static_cast<T>((row[i] - mean) * inv);
    }
}

template <typename T>
void weight_normalize_backward(const T* w, int channels, int64_t per_channel, const T* dy, T* dw) {
    for (int c = 0; c < channels; ++c) {
        const T* row = w + static_cast<int64_t>(c) * per_channel;
        const T* g = dy + static_cast<int64_t>(c) * per_channel;
        T* o = dw + static_cast<int64_t>(c) * per_channel;
        double s = 0.0, q = 0.0;
        for (int64_t i = 0; i < per_channel; ++i) {
            s += row[i];
            q += static_cast<double>(row[i]) * row[i];
        }
        const double n = static_cast<double>(per_channel);
        const double mean = s / n;
        const double var = std::max(0.0, q / n - mean * mean);
        const double inv = 1.0 / std::sqrt(var + kWeightNormEps);
        double gsum = 0.0, gdot = 0.0;  // Σdy and Σdy·xhat
        for (int64_t i = 0; i < per_channel; ++i) {
            gsum += g[i];
            gdot += static_cast<double>(g[i]) * ((row[i] - mean) * inv);
        }
        for (int64_t i = 0; i < per_channel; ++i) {
            const double xhat = (row[i] - mean) * inv;
            o[i] = static_cast<T>(inv * (g[i] - gsum / n - xhat * gdot / n));
        }
    }
}

template void weight_normalize<float>(const float*, int, int64_t, float*);
template void weight_normalize<double>(const double*, int, int64_t, double*);
template void weight_normalize_backward<float>(const float*, int, int64_t, const float*, float*);
template void weight_normalize_backward<double>(const double*, int, int64_t, const double*,
                                                double*);

template <typename T>
void bi_transform(const T* w, int64_t filters, int k2, const T* theta, int theta_dim, T* out) {
    assert(k2 <= theta_dim);
    for (int64_t f = 0; f < filters; ++f) {
        const T* row = w + f * k2;
        T* o = out + f * k2;
        for (int j = 0; j < k2; ++j) {
            double acc = 0.0;
            for (int i = 0; i < k2; ++i)
                acc += static_cast<double>(row[i]) * theta[static_cast<int64_t>(i) * theta_dim + j];
            o[j] = static_cast<T>(acc);
        }
    }
}

template <typename T>
void bi_transform_backward(const T* w, int64_t filters, int k2, const T* theta, int theta_dim,
                           const T* dy, T* dw, T* dtheta) {
    for (int64_t f = 0; f < filters; ++f) {
        const T* row = w + f * k2;
        const T* g = dy + f * k2;
        T* o = dw + f * k2;
        for (int i = 0; i < k2; ++i) {
            double acc = 0.0;
            for (int j = 0; j < k2; ++j)
                acc += static_cast<double>(g[j]) * theta[static_cast<int64_t>(i) * theta_dim + j];
            o[i] = static_cast<T>(acc);
        }
        if (dtheta) {
            for (int i = 0; i < k2; ++i)
                for (int j = 0; j < k2; ++j)
                    dtheta[static_cast<int64_t>(i) * theta_dim + j] +=
                        static_cast<T>(static_cast<double>(row[i]) * g[j]);
        }
    }
}

template void bi_transform<float>(const float*, int64_t, int, const float*, int, float*);
template void bi_transform<double>(const double*, int64_t, int, const double*, int, double*);
template void bi_transform_backward<float>(const float*, int64_t, int, const float*, int,
                                           const float*, float*, float*);
template void bi_transform_backward<double>(const double*, int64_t, int, const double*, int,
                                            const double*, double*, double*);

void rsign_forward(const Tensor& x, const float* shift, Tensor& y) {
    const int N = static_cast<int>(x.dim(0));
    const int C = static_cast<int>(x.dim(1));
    const int64_t map = x.numel() / (static_cast<int64_t>(N) * C);
    if (!y.same_shape(x)) y = Tensor(x.shape());
    parallel_for(N, [&](int64_t n) {
        for (int c = 0; c < C; ++c) {
            const float a = shift[c];
            const float* px = x.data() + (n * C + c) * map;
            float* py = y.data() + (n * C + c) * map;
            for (int64_t i = 0; i < map; ++i) py[i] = px[i] - a >= 0.0f ? 1.0f : -1.0f;
        }
    });
}

void rsign_backward(const Tensor& x, const float* shift, const Tensor& dy, Tensor& dx,
                    float* dshift) {
    const int N = static_cast<int>(x.dim(0));
    const int C = static_cast<int>(x.dim(1));
    const int64_t map = x.numel() / (static_cast<int64_t>(N) * C);
    if (!dx.same_shape(x)) dx = Tensor(x.shape());
    std::vector<double> ds(static_cast<size_t>(C), 0.0);
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const float a = shift[c];
            const float* px = x.data() + (static_cast<int64_t>(n) * C + c) * map;
            const float* pdy = dy.data() + (static_cast<int64_t>(n) * C + c) * map;
            float* pdx = dx.data() + (static_cast<int64_t>(n) * C + c) * map;
            double acc = 0.0;
            for (int64_t i = 0; i < map; ++i) {
                const float u = px[i] - a;
                const bool pass = u >= -1.0f && u <= 1.0f;
                pdx[i] = pass ? pdy[i] : 0.0f;
                if (pass) acc += pdy[i];
            }
            ds[static_cast<size_t>(c)] -= acc;  // d(x - a)/da = -1
        }
    }
    if (dshift)
        for (int c = 0; c < C; ++c) dshift[c] += static_cast<float>(ds[static_cast<size_t>(c)]);
}

void rprelu_forward(const Tensor& x, const float* gamma, const float* beta, const float* zeta,
                    Tensor& y) {
    const int N = static_cast<int>(x.dim(0));
    const int C = static_cast<int>(x.dim(1));
    const int64_t map = x.numel() / (static_cast<int64_t>(N) * C);
    if (!y.same_shape(x)) y = Tensor(x.shape());
    parallel_for(N, [&](int64_t n) {
        for (int c = 0; c < C; ++c) {
            const float g = gamma[c], b = beta[c], z = zeta[c];
            const float* px = x.data() + (n * C + c) * map;
            float* py = y.data() + (n * C + c) * map;
            for (int64_t i = 0; i < map; ++i) {
                const float u = px[i] - g;
                py[i] = (u > 0.0f ? u : b * u) + z;
            }
        }
    });
}

void rprelu_backward(const Tensor& x, const float* gamma, const float* beta, const Tensor& dy,
                     Tensor& dx, float* dgamma, float* dbeta, float* dzeta) {
    const int N = static_cast<int>(x.dim(0));
    const int C = static_cast<int>(x.dim(1));
    const int64_t map = x.numel() / (static_cast<int64_t>(N) * C);
    if (!dx.same_shape(x)) dx = Tensor(x.shape());
    std::vector<double> dg(static_cast<size_t>(C), 0.0), db(static_cast<size_t>(C), 0.0),
        dz(static_cast<size_t>(C), 0.0);
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const float g = gamma[c], b = beta[c];
            const float* px = x.data() + (static_cast<int64_t>(n) * C + c) * map;
            const float* pdy = dy.data() + (static_cast<int64_t>(n) * C + c) * map;
            float* pdx = dx.data() + (static_cast<int64_t>(n) * C + c) * map;
            for (int64_t i = 0; i < map; ++i) {
                const float u = px[i] - g;
                const float d = pdy[i];
                dz[static_cast<size_t>(c)] += d;
                if (u > 0.0f) {
                    pdx[i] = d;
                    dg[static_cast<size_t>(c)] -= d;
                } else {
                    pdx[i] = b * d;
                    dg[static_cast<size_t>(c)] -= static_cast<double>(b) * d;
                    db[static_cast<size_t>(c)] += static_cast<double>(u) * d;
                }
            }
        }
    }
    for (int c = 0; c < C; ++c) {
        if (dgamma) dgamma[c] += static_cast<float>(dg[static_cast<size_t>(c)]);
        if (dbeta) dbeta[c] += static_cast<float>(db[static_cast<size_t>(c)]);
        if (dzeta) dzeta[c] += static_cast<float>(dz[static_cast<size_t>(c)]);
    }
}

void channel_abs_mean(const float* w, int channels, int64_t per_channel, float* alpha) {
    for (int c = 0; c < channels; ++c) {
        const float* row = w + static_cast<int64_t>(c) * per_channel;
        double s = 0.0;
        for (int64_t i = 0; i < per_channel; ++i) s += std::fabs(row[i]);
        alpha[c] = static_cast<float>(s / static_cast<double>(per_channel));
    }
}

Tensor binary_conv(const Tensor& x_b, const Tensor& w_pre, const nn::ConvSpec& spec,
                   bool alpha_scaling, Tensor* prescale_out) {
    if (x_b.dim(1) % spec.groups != 0 || w_pre.dim(0) % spec.groups != 0)
        throw ConfigError("binary_conv: channels not divisible by groups");
    Tensor w_bin(w_pre.shape());
    sign_forward(w_pre.data(), w_bin.data(), w_pre.numel());
    Tensor y;
    nn::conv2d_forward(x_b, w_bin, spec, y);
    if (prescale_out) *prescale_out = y;
    if (alpha_scaling) {
        const int Co = static_cast<int>(w_pre.dim(0));
        const int64_t per = w_pre.numel() / Co;
        std::vector<float> alpha(static_cast<size_t>(Co));
        channel_abs_mean(w_pre.data(), Co, per, alpha.data());
        const int N = static_cast<int>(y.dim(0));
        const int64_t map = y.numel() / (static_cast<int64_t>(N) * Co);
        parallel_for(N, [&](int64_t n) {
            for (int c = 0; c < Co; ++c) {
                float* p = y.data() + (n * Co + c) * map;
                for (int64_t i = 0; i < map; ++i) p[i] *= alpha[static_cast<size_t>(c)];
            }
        });
    }
    return y;
}

}  // namespace nasbnn
