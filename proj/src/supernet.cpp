#include "nasbnn/supernet.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>

#include "nasbnn/binops.hpp"
#include "nasbnn/errors.hpp"
#include "nasbnn/parallel.hpp"

namespace nasbnn {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;
constexpr float kLsqQn = -128.0f;
constexpr float kLsqQp = 127.0f;

void fill_normal(Tensor& t, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (int64_t i = 0; i < t.numel(); ++i) t.at(i) = static_cast<float>(dist(rng));
}

// Active slice of a dense unit weight: first-out rows, first in/g columns,
// centered spatial crop.
void gather_slice(const Tensor& dense, const UnitPlan& p, const UnitActive& a, Tensor& out) {
    const int in_g = a.in_c / a.g;
    const int dense_in = p.in_max / p.g_store;
    const int off = (p.k_max - a.k) / 2;
    if (!out.same_shape(Tensor({a.out_c, in_g, a.k, a.k}))) out = Tensor({a.out_c, in_g, a.k, a.k});
    const float* src = dense.data();
    float* dst = out.data();
    for (int o = 0; o < a.out_c; ++o) {
        for (int r = 0; r < in_g; ++r) {
            for (int i = 0; i < a.k; ++i) {
                const float* s = src + ((static_cast<int64_t>(o) * dense_in + r) * p.k_max +
                                        (i + off)) * p.k_max + off;
                float* d = dst + ((static_cast<int64_t>(o) * in_g + r) * a.k + i) * a.k;
                std::memcpy(d, s, sizeof(float) * static_cast<size_t>(a.k));
            }
        }
    }
}

void scatter_slice_add(const Tensor& dslice, const UnitPlan& p, const UnitActive& a, Tensor& dense) {
    const int in_g = a.in_c / a.g;
    const int dense_in = p.in_max / p.g_store;
    const int off = (p.k_max - a.k) / 2;
    const float* src = dslice.data();
    float* dst = dense.data();
    for (int o = 0; o < a.out_c; ++o) {
        for (int r = 0; r < in_g; ++r) {
            for (int i = 0; i < a.k; ++i) {
                const float* s = src + ((static_cast<int64_t>(o) * in_g + r) * a.k + i) * a.k;
                float* d = dst + ((static_cast<int64_t>(o) * dense_in + r) * p.k_max + (i + off)) *
                                     p.k_max + off;
                for (int j = 0; j < a.k; ++j) d[j] += s[j];
            }
        }
    }
}

// Shared-weight pipeline of one unit under a given mode: slice, normalize,
// and for the binary path transform + sign (+ per-channel magnitude).
struct WeightPath {
    Tensor w_slice;
    Tensor w_norm;
    Tensor w_t;  // BWBA only: transformed pre-sign weights
    std::vector<float> alpha;
    Tensor w_eff;
};

void compute_weight_path(const ConvUnit& u, const UnitActive& a, ExecMode mode, bool alpha_scaling,
                         WeightPath& wp) {
    gather_slice(u.w.value, u.plan, a, wp.w_slice);
    const int64_t per = static_cast<int64_t>(a.in_c / a.g) * a.k * a.k;
    wp.w_norm = Tensor(wp.w_slice.shape());
    weight_normalize(wp.w_slice.data(), a.out_c, per, wp.w_norm.data());
    if (mode != ExecMode::BWBA) {
        wp.w_eff = wp.w_norm;
        return;
    }
    const int k2 = a.k * a.k;
    const int theta_dim = u.plan.k_max * u.plan.k_max;
    const int64_t filters = static_cast<int64_t>(a.out_c) * (a.in_c / a.g);
    wp.w_t = Tensor(wp.w_norm.shape());
    bi_transform(wp.w_norm.data(), filters, k2, u.theta.value.data(), theta_dim, wp.w_t.data());
    wp.w_eff = Tensor(wp.w_t.shape());
    sign_forward(wp.w_t.data(), wp.w_eff.data(), wp.w_t.numel());
    if (alpha_scaling) {
        wp.alpha.assign(static_cast<size_t>(a.out_c), 0.0f);
        channel_abs_mean(wp.w_t.data(), a.out_c, per, wp.alpha.data());
        float* p = wp.w_eff.data();
        for (int o = 0; o < a.out_c; ++o) {
            const float al = wp.alpha[static_cast<size_t>(o)];
            for (int64_t i = 0; i < per; ++i) p[static_cast<int64_t>(o) * per + i] *= al;
        }
    }
}

void weight_path_backward(ConvUnit& u, const UnitActive& a, ExecMode mode, bool alpha_scaling,
                          const WeightPath& wp, const Tensor& dw_eff, bool accumulate_binarizer) {
    const int64_t per = static_cast<int64_t>(a.in_c / a.g) * a.k * a.k;
    Tensor dslice(wp.w_slice.shape());
    if (mode == ExecMode::BWBA) {
        // through the constant magnitude and the sign STE
        Tensor dsign = dw_eff;
        if (alpha_scaling) {
            float* p = dsign.data();
            for (int o = 0; o < a.out_c; ++o) {
                const float al = wp.alpha[static_cast<size_t>(o)];
                for (int64_t i = 0; i < per; ++i) p[static_cast<int64_t>(o) * per + i] *= al;
            }
        }
        Tensor dwt(dsign.shape());
        sign_backward(wp.w_t.data(), dsign.data(), dwt.data(), dwt.numel());
        const int k2 = a.k * a.k;
        const int theta_dim = u.plan.k_max * u.plan.k_max;
        const int64_t filters = static_cast<int64_t>(a.out_c) * (a.in_c / a.g);
        Tensor dwnorm(dwt.shape());
        bi_transform_backward(wp.w_norm.data(), filters, k2, u.theta.value.data(), theta_dim,
                              dwt.data(), dwnorm.data(),
                              accumulate_binarizer ? u.theta.grad.data() : nullptr);
        weight_normalize_backward(wp.w_slice.data(), a.out_c, per, dwnorm.data(), dslice.data());
    } else {
        weight_normalize_backward(wp.w_slice.data(), a.out_c, per, dw_eff.data(), dslice.data());
    }
    scatter_slice_add(dslice, u.plan, a, u.w.grad);
}

// y += shortcut(x): spatial average pooling on stride-2 units, channel
// tiling when the width grows.
void add_shortcut(Tensor& y, const Tensor& x, const UnitActive& a) {
    const Tensor* src = &x;
    Tensor pooled;
    if (a.stride == 2) {
        nn::avgpool2x2_forward(x, pooled);
        src = &pooled;
    }
    const int N = static_cast<int>(y.dim(0));
    const int64_t map = static_cast<int64_t>(y.dim(2)) * y.dim(3);
    assert(src->dim(2) == y.dim(2) && src->dim(3) == y.dim(3));
    parallel_for(N, [&](int64_t n) {
        for (int j = 0; j < a.out_c; ++j) {
            const float* ps = src->data() + (n * a.in_c + j % a.in_c) * map;
            float* py = y.data() + (n * a.out_c + j) * map;
            for (int64_t i = 0; i < map; ++i) py[i] += ps[i];
        }
    });
}

// dx += d(shortcut)(dz)
void shortcut_backward_add(const Tensor& dz, const UnitActive& a, int in_h, int in_w, Tensor& dx) {
    const int N = static_cast<int>(dz.dim(0));
    const int Ho = static_cast<int>(dz.dim(2));
    const int Wo = static_cast<int>(dz.dim(3));
    const int64_t map = static_cast<int64_t>(Ho) * Wo;
    Tensor dsrc({N, a.in_c, Ho, Wo});
    parallel_for(N, [&](int64_t n) {
        for (int c = 0; c < a.in_c; ++c) {
            float* pd = dsrc.data() + (n * a.in_c + c) * map;
            for (int j = c; j < a.out_c; j += a.in_c) {
                const float* pz = dz.data() + (n * a.out_c + j) * map;
                for (int64_t i = 0; i < map; ++i) pd[i] += pz[i];
            }
        }
    });
    if (a.stride == 2) {
        Tensor tmp;
        nn::avgpool2x2_backward(dsrc, in_h, in_w, tmp);
        float* p = dx.data();
        const float* q = tmp.data();
        for (int64_t i = 0; i < dx.numel(); ++i) p[i] += q[i];
    } else {
        float* p = dx.data();
        const float* q = dsrc.data();
        for (int64_t i = 0; i < dx.numel(); ++i) p[i] += q[i];
    }
}

void lsq_quantize(const float* w, int64_t n, float step, float* out) {
    const float s = std::max(step, 1e-8f);
    for (int64_t i = 0; i < n; ++i) {
        float v = w[i] / s;
        v = std::min(std::max(v, kLsqQn), kLsqQp);
        out[i] = std::round(v) * s;
    }
}

}  // namespace

const char* exec_mode_name(ExecMode mode) {
    switch (mode) {
        case ExecMode::FWBA: return "fwba";
        case ExecMode::BWBA: return "bwba";
        case ExecMode::FWFA: return "fwfa";
    }
    return "?";
}

ExecMode exec_mode_from_name(const std::string& name) {
    if (name == "fwba") return ExecMode::FWBA;
    if (name == "bwba") return ExecMode::BWBA;
    if (name == "fwfa") return ExecMode::FWFA;
    throw ConfigError("unknown execution mode: " + name);
}

ConvUnit::ConvUnit(const UnitPlan& p, const std::string& prefix, Rng& rng) : plan(p) {
    const int dense_in = p.in_max / p.g_store;
    w.name = prefix + ".w";
    w.value = Tensor({p.out_max, dense_in, p.k_max, p.k_max});
    w.grad = Tensor(w.value.shape());
    w.decay = true;
    fill_normal(w.value, std::sqrt(2.0 / (static_cast<double>(dense_in) * p.k_max * p.k_max)), rng);

    const int t = p.k_max * p.k_max;
    theta.name = prefix + ".theta";
    theta.value = Tensor({t, t});
    theta.grad = Tensor({t, t});
    theta.binarizer = true;
    for (int i = 0; i < t; ++i) theta.value.at(static_cast<int64_t>(i) * t + i) = 1.0f;

    auto vec_param = [&](Param& pr, const std::string& name, int n, float init, bool binarizer) {
        pr.name = prefix + name;
        pr.value = Tensor::full({n}, init);
        pr.grad = Tensor({n});
        pr.binarizer = binarizer;
    };
    vec_param(bn_gamma, ".bn.gamma", p.out_max, 1.0f, false);
    vec_param(bn_beta, ".bn.beta", p.out_max, 0.0f, false);
    vec_param(rs_shift, ".rsign.shift", p.in_max, 0.0f, true);
    vec_param(pr_gamma, ".rprelu.gamma", p.out_max, 0.0f, true);
    vec_param(pr_beta, ".rprelu.beta", p.out_max, 0.25f, true);
    vec_param(pr_zeta, ".rprelu.zeta", p.out_max, 0.0f, true);
    bn_mean = Tensor({p.out_max});
    bn_var = Tensor::full({p.out_max}, 1.0f);
}

std::vector<Param*> ConvUnit::params() {
    return {&w, &theta, &bn_gamma, &bn_beta, &rs_shift, &pr_gamma, &pr_beta, &pr_zeta};
}

Supernet::Supernet(const SearchSpace& space, SupernetConfig cfg) : space_(space), cfg_(cfg) {
    check_space(space_);
    Rng rng = make_rng(cfg_.init_seed, 0x51);
    build(rng);
}

Supernet::Supernet(const Supernet&) = default;

void Supernet::build(Rng& rng) {
    const int stem_max = space_.max_stem();
    stem_.w.name = "stem.w";
    stem_.w.value = Tensor({stem_max, 3, space_.stem_kernel, space_.stem_kernel});
    stem_.w.grad = Tensor(stem_.w.value.shape());
    stem_.w.decay = true;
    fill_normal(stem_.w.value,
                std::sqrt(2.0 / (3.0 * space_.stem_kernel * space_.stem_kernel)), rng);
    stem_.lsq_step.name = "stem.lsq_step";
    stem_.lsq_step.value = Tensor({1});
    stem_.lsq_step.grad = Tensor({1});
    {
        double s = 0.0;
        for (int64_t i = 0; i < stem_.w.value.numel(); ++i) s += std::fabs(stem_.w.value.at(i));
        s /= static_cast<double>(stem_.w.value.numel());
        stem_.lsq_step.value.at(0) = static_cast<float>(2.0 * s / std::sqrt(kLsqQp));
    }
    stem_.bn_gamma.name = "stem.bn.gamma";
    stem_.bn_gamma.value = Tensor::full({stem_max}, 1.0f);
    stem_.bn_gamma.grad = Tensor({stem_max});
    stem_.bn_beta.name = "stem.bn.beta";
    stem_.bn_beta.value = Tensor({stem_max});
    stem_.bn_beta.grad = Tensor({stem_max});
    stem_.bn_mean = Tensor({stem_max});
    stem_.bn_var = Tensor::full({stem_max}, 1.0f);

    units_.clear();
    stage_unit_base_.clear();
    int prev_max = stem_max;
    for (int s = 0; s < space_.num_stages(); ++s) {
        const StageSpec& st = space_.stages[static_cast<size_t>(s)];
        stage_unit_base_.push_back(static_cast<int>(units_.size()));
        const int own_max = st.max_channels();
        for (int l = 0; l < st.max_depth(); ++l) {
            const int in_max = l == 0 ? prev_max : own_max;
            if (in_max % st.min_groups() != 0)
                throw ConfigError("stage " + std::to_string(s + 1) + ": input width " +
                                  std::to_string(in_max) + " not divisible by min groups");
            const std::string base =
                "s" + std::to_string(s + 1) + ".l" + std::to_string(l + 1);
            UnitPlan pa{s + 1, l + 1, 'a', in_max, in_max, st.min_groups(), st.max_kernel(),
                        l == 0 ? st.stride : 1};
            units_.emplace_back(pa, base + ".a", rng);
            UnitPlan pb{s + 1, l + 1, 'b', in_max, own_max, 1, 1, 1};
            units_.emplace_back(pb, base + ".b", rng);
        }
        prev_max = own_max;
    }

    head_.w.name = "head.w";
    head_.w.value = Tensor({space_.num_classes, prev_max});
    head_.w.grad = Tensor(head_.w.value.shape());
    head_.w.decay = true;
    fill_normal(head_.w.value, 0.01, rng);
    head_.bias.name = "head.bias";
    head_.bias.value = Tensor({space_.num_classes});
    head_.bias.grad = Tensor({space_.num_classes});

    recalib_.assign(units_.size() + 1, {});
}

int Supernet::unit_index(int stage, int layer, char which) const {
    const int base = stage_unit_base_[static_cast<size_t>(stage)];
    return base + 2 * layer + (which == 'b' ? 1 : 0);
}

void Supernet::activate(const Architecture& arch) {
    if (materialized_) {
        if (!(arch == *built_arch_))
            throw ConfigError("materialized subnet can only activate its own architecture");
    } else {
        ValidationResult v = validate(space_, arch);
        if (!v.ok()) throw ConfigError("activate: invalid architecture: " + v.str());
    }
    active_ = arch;
}

const Architecture& Supernet::active_arch() const {
    if (!active_) throw ConfigError("no active subnet");
    return *active_;
}

Tensor Supernet::forward(const Tensor& x, const ForwardOptions& opts, Trace* trace) {
    if (!active_) throw ConfigError("forward: no active subnet");
    if (x.ndim() != 4 || x.dim(1) != 3)
        throw ConfigError("forward: input must be [N,3,H,W]");
    if (x.dim(2) != space_.input_resolution || x.dim(3) != space_.input_resolution)
        throw ConfigError("forward: resolution mismatch: got " + std::to_string(x.dim(2)) +
                          ", space expects " + std::to_string(space_.input_resolution));
    const Architecture& arch = *active_;
    if (trace) {
        *trace = Trace{};
        trace->mode = opts.mode;
        trace->bn_train = opts.bn_train || opts.bn_recalib;
        trace->arch = arch;
    }
    if (opts.bn_recalib && !recalib_active_)
        throw ConfigError("bn_recalib forward outside a recalibration session");

    auto bn_apply = [&](const Tensor& y, Param& gamma, Param& beta, Tensor& r_mean, Tensor& r_var,
                        int out_c, BnAccum& accum, Tensor* xhat, std::vector<double>* mean_used,
                        std::vector<double>* var_used, Tensor& out) {
        std::vector<double> mean, var;
        if (opts.bn_train || opts.bn_recalib) {
            nn::bn_stats(y, mean, var);
            if (opts.bn_recalib) {
                if (accum.sum.empty()) {
                    accum.sum.assign(static_cast<size_t>(out_c), 0.0);
                    accum.sumsq.assign(static_cast<size_t>(out_c), 0.0);
                }
                if (static_cast<int>(accum.sum.size()) != out_c)
                    throw ConfigError("recalibration session mixed architectures");
                for (int c = 0; c < out_c; ++c) {
                    accum.sum[static_cast<size_t>(c)] += mean[static_cast<size_t>(c)];
                    accum.sumsq[static_cast<size_t>(c)] += var[static_cast<size_t>(c)];
                }
                accum.batches += 1;
            } else {
                for (int c = 0; c < out_c; ++c) {
                    r_mean.at(c) = static_cast<float>((1.0 - kBnMomentum) * r_mean.at(c) +
                                                      kBnMomentum * mean[static_cast<size_t>(c)]);
                    r_var.at(c) = static_cast<float>((1.0 - kBnMomentum) * r_var.at(c) +
                                                     kBnMomentum * var[static_cast<size_t>(c)]);
                }
            }
        } else {
            mean.resize(static_cast<size_t>(out_c));
            var.resize(static_cast<size_t>(out_c));
            for (int c = 0; c < out_c; ++c) {
                mean[static_cast<size_t>(c)] = r_mean.at(c);
                var[static_cast<size_t>(c)] = r_var.at(c);
            }
        }
        nn::bn_forward(y, gamma.value.data(), beta.value.data(), mean.data(), var.data(), kBnEps,
                       out, xhat);
        if (mean_used) *mean_used = std::move(mean);
        if (var_used) *var_used = std::move(var);
    };

    // stem: int8-simulated (or full-precision) conv + BN
    auto cur = std::make_shared<Tensor>();
    {
        const int stem_c = arch.stem_channels;
        Tensor w_slice({stem_c, 3, space_.stem_kernel, space_.stem_kernel});
        std::memcpy(w_slice.data(), stem_.w.value.data(),
                    sizeof(float) * static_cast<size_t>(w_slice.numel()));
        if (cfg_.stem_lsq)
            lsq_quantize(w_slice.data(), w_slice.numel(), stem_.lsq_step.value.at(0),
                         w_slice.data());
        Tensor y;
        nn::conv2d_forward(x, w_slice,
                           {space_.stem_stride, space_.stem_kernel / 2, 1}, y);
        Tensor ybn;
        StemTrace* st = trace ? &trace->stem : nullptr;
        bn_apply(y, stem_.bn_gamma, stem_.bn_beta, stem_.bn_mean, stem_.bn_var, stem_c,
                 recalib_[units_.size()], st ? &st->xhat : nullptr, st ? &st->mean : nullptr,
                 st ? &st->var : nullptr, *cur);
        if (st) {
            st->x_in = std::make_shared<Tensor>(x);
            st->out_c = stem_c;
        }
    }

    // separable blocks
    int prev = arch.stem_channels;
    for (int s = 0; s < space_.num_stages(); ++s) {
        for (int l = 0; l < arch.depth(s); ++l) {
            const LayerChoice& lc = arch.stage_layers[static_cast<size_t>(s)][static_cast<size_t>(l)];
            for (char which : {'a', 'b'}) {
                const int ui = unit_index(s, l, which);
                ConvUnit& u = units_[static_cast<size_t>(ui)];
                UnitActive a;
                if (which == 'a') {
                    a = {prev, prev, lc.kernel, lc.groups, u.plan.stride};
                } else {
                    a = {prev, lc.channels, 1, 1, 1};
                    if (a.out_c < a.in_c)
                        throw ConfigError("forward: block output width below input width");
                }
                Tensor xb;
                const Tensor* conv_in = cur.get();
                if (opts.mode != ExecMode::FWFA) {
                    rsign_forward(*cur, u.rs_shift.value.data(), xb);
                    conv_in = &xb;
                }
                WeightPath wp;
                compute_weight_path(u, a, opts.mode, cfg_.alpha_scaling, wp);
                Tensor y;
                nn::conv2d_forward(*conv_in, wp.w_eff, {a.stride, a.k / 2, a.g}, y);
                Tensor z;
                UnitTrace* ut = nullptr;
                if (trace) {
                    trace->units.emplace_back();
                    ut = &trace->units.back();
                }
                bn_apply(y, u.bn_gamma, u.bn_beta, u.bn_mean, u.bn_var, a.out_c, recalib_[static_cast<size_t>(ui)],
                         ut ? &ut->xhat : nullptr, ut ? &ut->mean : nullptr,
                         ut ? &ut->var : nullptr, z);
                add_shortcut(z, *cur, a);
                auto out = std::make_shared<Tensor>();
                rprelu_forward(z, u.pr_gamma.value.data(), u.pr_beta.value.data(),
                               u.pr_zeta.value.data(), *out);
                if (ut) {
                    ut->x_in = cur;
                    ut->act = a;
                    ut->unit_index = ui;
                }
                cur = out;
            }
            prev = lc.channels;
        }
    }

    // head: global average pool + full-precision classifier
    Tensor pooled;
    nn::global_avgpool_forward(*cur, pooled);
    Tensor w_head({space_.num_classes, prev});
    for (int o = 0; o < space_.num_classes; ++o)
        std::memcpy(w_head.data() + static_cast<int64_t>(o) * prev,
                    head_.w.value.data() + o * head_.w.value.dim(1),
                    sizeof(float) * static_cast<size_t>(prev));
    Tensor logits;
    nn::linear_forward(pooled, w_head.data(), prev, head_.bias.value.data(), prev,
                       space_.num_classes, logits);
    if (trace) {
        trace->pooled = pooled;
        trace->features = cur;
        trace->logits = logits;
    }
    return logits;
}

void Supernet::backward(const Trace& trace, const Tensor& dlogits, const BackwardOptions& opts) {
    if (!trace.bn_train)
        throw ConfigError("backward requires a trace recorded with bn_train");
    const int N = static_cast<int>(dlogits.dim(0));
    int c_last = static_cast<int>(trace.pooled.dim(1));

    // head
    Tensor w_head({space_.num_classes, c_last});
    for (int o = 0; o < space_.num_classes; ++o)
        std::memcpy(w_head.data() + static_cast<int64_t>(o) * c_last,
                    head_.w.value.data() + o * head_.w.value.dim(1),
                    sizeof(float) * static_cast<size_t>(c_last));
    Tensor dpooled;
    {
        Tensor dw_head({space_.num_classes, c_last});
        nn::linear_backward(trace.pooled, w_head.data(), c_last, dlogits, c_last,
                            space_.num_classes, dpooled, dw_head.data(), c_last,
                            head_.bias.grad.data());
        for (int o = 0; o < space_.num_classes; ++o) {
            float* dst = head_.w.grad.data() + o * head_.w.value.dim(1);
            const float* src = dw_head.data() + static_cast<int64_t>(o) * c_last;
            for (int i = 0; i < c_last; ++i) dst[i] += src[i];
        }
    }
    Tensor dx;
    nn::global_avgpool_backward(dpooled, static_cast<int>(trace.features->dim(2)),
                                static_cast<int>(trace.features->dim(3)), dx);

    // blocks in reverse
    for (auto it = trace.units.rbegin(); it != trace.units.rend(); ++it) {
        const UnitTrace& ut = *it;
        ConvUnit& u = units_[static_cast<size_t>(ut.unit_index)];
        const UnitActive& a = ut.act;
        const Tensor& x_in = *ut.x_in;
        const int in_h = static_cast<int>(x_in.dim(2));
        const int in_w = static_cast<int>(x_in.dim(3));

        // recompute z = BN(y) + shortcut(x) from xhat
        Tensor z(ut.xhat.shape());
        {
            const int64_t map = ut.xhat.numel() / (static_cast<int64_t>(N) * a.out_c);
            parallel_for(N, [&](int64_t n) {
                for (int c = 0; c < a.out_c; ++c) {
                    const float g = u.bn_gamma.value.at(c), b = u.bn_beta.value.at(c);
                    const float* ph = ut.xhat.data() + (n * a.out_c + c) * map;
                    float* pz = z.data() + (n * a.out_c + c) * map;
                    for (int64_t i = 0; i < map; ++i) pz[i] = g * ph[i] + b;
                }
            });
            add_shortcut(z, x_in, a);
        }
        Tensor dz;
        rprelu_backward(z, u.pr_gamma.value.data(), u.pr_beta.value.data(), dx, dz,
                        opts.accumulate_binarizer ? u.pr_gamma.grad.data() : nullptr,
                        opts.accumulate_binarizer ? u.pr_beta.grad.data() : nullptr,
                        opts.accumulate_binarizer ? u.pr_zeta.grad.data() : nullptr);

        Tensor dx_next({N, a.in_c, in_h, in_w});
        shortcut_backward_add(dz, a, in_h, in_w, dx_next);

        Tensor dy;
        nn::bn_backward(ut.xhat, u.bn_gamma.value.data(), ut.var.data(), kBnEps, dz, dy,
                        u.bn_gamma.grad.data(), u.bn_beta.grad.data());

        // conv: recompute the binarized input and the weight path
        Tensor xb;
        const Tensor* conv_in = &x_in;
        if (trace.mode != ExecMode::FWFA) {
            rsign_forward(x_in, u.rs_shift.value.data(), xb);
            conv_in = &xb;
        }
        WeightPath wp;
        compute_weight_path(u, a, trace.mode, cfg_.alpha_scaling, wp);
        const nn::ConvSpec spec{a.stride, a.k / 2, a.g};
        Tensor dconv_in({N, a.in_c, in_h, in_w});
        nn::conv2d_backward_input(dy, wp.w_eff, spec, dconv_in);
        Tensor dw_eff(wp.w_eff.shape());
        nn::conv2d_backward_weight(dy, *conv_in, spec, dw_eff);
        weight_path_backward(u, a, trace.mode, cfg_.alpha_scaling, wp, dw_eff,
                             opts.accumulate_binarizer);

        if (trace.mode != ExecMode::FWFA) {
            Tensor dxr;
            rsign_backward(x_in, u.rs_shift.value.data(), dconv_in, dxr,
                           opts.accumulate_binarizer ? u.rs_shift.grad.data() : nullptr);
            float* p = dx_next.data();
            const float* q = dxr.data();
            for (int64_t i = 0; i < dx_next.numel(); ++i) p[i] += q[i];
        } else {
            float* p = dx_next.data();
            const float* q = dconv_in.data();
            for (int64_t i = 0; i < dx_next.numel(); ++i) p[i] += q[i];
        }
        dx = std::move(dx_next);
    }

    // stem
    {
        const StemTrace& st = trace.stem;
        const Tensor& x_in = *st.x_in;
        Tensor dy;
        nn::bn_backward(st.xhat, stem_.bn_gamma.value.data(), st.var.data(), kBnEps, dx, dy,
                        stem_.bn_gamma.grad.data(), stem_.bn_beta.grad.data());
        const int stem_c = st.out_c;
        Tensor w_slice({stem_c, 3, space_.stem_kernel, space_.stem_kernel});
        std::memcpy(w_slice.data(), stem_.w.value.data(),
                    sizeof(float) * static_cast<size_t>(w_slice.numel()));
        const nn::ConvSpec spec{space_.stem_stride, space_.stem_kernel / 2, 1};
        Tensor dwq(w_slice.shape());
        nn::conv2d_backward_weight(dy, x_in, spec, dwq);
        if (cfg_.stem_lsq) {
            const float s = std::max(stem_.lsq_step.value.at(0), 1e-8f);
            const double gscale = 1.0 / std::sqrt(static_cast<double>(w_q.numel()) * kLsqQp);
            double ds = 0.0;
            for (int64_t i = 0; i < w_q.numel(); ++i) {
                const float v = w_slice.at(i) / s;
                if (v <= kLsqQn) {
                    ds += static_cast<double>(dwq.at(i)) * kLsqQn;
                } else if (v >= kLsqQp) {
                    ds += static_cast<double>(dwq.at(i)) * kLsqQp;
                } else {
                    ds += static_cast<double>(dwq.at(i)) * (std::round(v) - v);
                    stem_.w.grad.at(i) += dwq.at(i);
                }
            }
            stem_.lsq_step.grad.at(0) += static_cast<float>(ds * gscale);
        } else {
            for (int64_t i = 0; i < w_q.numel(); ++i) stem_.w.grad.at(i) += dwq.at(i);
        }
    }
}

void Supernet::zero_grads() {
    for (Param* p : params()) p->grad.zero();
}

std::vector<Param*> Supernet::params() {
    std::vector<Param*> out;
    out.push_back(&stem_.w);
    if (cfg_.stem_lsq) out.push_back(&stem_.lsq_step);
    out.push_back(&stem_.bn_gamma);
    out.push_back(&stem_.bn_beta);
    for (ConvUnit& u : units_)
        for (Param* p : u.params()) out.push_back(p);
    out.push_back(&head_.w);
    out.push_back(&head_.bias);
    return out;
}

std::map<std::string, Tensor*> Supernet::state() {
    std::map<std::string, Tensor*> m;
    for (Param* p : params()) m[p->name] = &p->value;
    m["stem.bn.running_mean"] = &stem_.bn_mean;
    m["stem.bn.running_var"] = &stem_.bn_var;
    for (ConvUnit& u : units_) {
        const std::string base = u.w.name.substr(0, u.w.name.size() - 2);  // strip ".w"
        m[base + ".bn.running_mean"] = &u.bn_mean;
        m[base + ".bn.running_var"] = &u.bn_var;
    }
    if (!cfg_.stem_lsq) m["stem.lsq_step"] = &stem_.lsq_step.value;
    return m;
}

int64_t Supernet::param_count() const {
    int64_t n = 0;
    for (Param* p : const_cast<Supernet*>(this)->params()) n += p->value.numel();
    return n;
}

SubnetBundle Supernet::extract_subnet(const Architecture& arch) const {
    if (materialized_) throw ConfigError("cannot extract from a materialized subnet");
    ValidationResult v = validate(space_, arch);
    if (!v.ok()) throw ConfigError("extract_subnet: invalid architecture: " + v.str());

    auto net = std::shared_ptr<Supernet>(new Supernet());
    net->space_ = space_;
    net->cfg_ = cfg_;
    net->materialized_ = true;
    net->built_arch_ = arch;
    Rng rng = make_rng(cfg_.init_seed, 0x52);

    // stem
    const int stem_c = arch.stem_channels;
    net->stem_.w.name = "stem.w";
    net->stem_.w.value = Tensor({stem_c, 3, space_.stem_kernel, space_.stem_kernel});
    net->stem_.w.grad = Tensor(net->stem_.w.value.shape());
    net->stem_.w.decay = true;
    std::memcpy(net->stem_.w.value.data(), stem_.w.value.data(),
                sizeof(float) * static_cast<size_t>(net->stem_.w.value.numel()));
    net->stem_.lsq_step = stem_.lsq_step;
    net->stem_.lsq_step.grad = Tensor({1});
    auto copy_vec = [](const Tensor& src, int n) {
        Tensor t({n});
        std::memcpy(t.data(), src.data(), sizeof(float) * static_cast<size_t>(n));
        return t;
    };
    net->stem_.bn_gamma.name = "stem.bn.gamma";
    net->stem_.bn_gamma.value = copy_vec(stem_.bn_gamma.value, stem_c);
    net->stem_.bn_gamma.grad = Tensor({stem_c});
    net->stem_.bn_beta.name = "stem.bn.beta";
    net->stem_.bn_beta.value = copy_vec(stem_.bn_beta.value, stem_c);
    net->stem_.bn_beta.grad = Tensor({stem_c});
    net->stem_.bn_mean = copy_vec(stem_.bn_mean, stem_c);
    net->stem_.bn_var = copy_vec(stem_.bn_var, stem_c);

    int prev = stem_c;
    for (int s = 0; s < space_.num_stages(); ++s) {
        net->stage_unit_base_.push_back(static_cast<int>(net->units_.size()));
        for (int l = 0; l < arch.depth(s); ++l) {
            const LayerChoice& lc = arch.stage_layers[static_cast<size_t>(s)][static_cast<size_t>(l)];
            for (char which : {'a', 'b'}) {
                const ConvUnit& src = units_[static_cast<size_t>(unit_index(s, l, which))];
                UnitActive a = which == 'a'
                                   ? UnitActive{prev, prev, lc.kernel, lc.groups, src.plan.stride}
                                   : UnitActive{prev, lc.channels, 1, 1, 1};
                UnitPlan p{s + 1, l + 1, which, a.in_c, a.out_c, a.g, a.k, a.stride};
                const std::string base = "s" + std::to_string(s + 1) + ".l" + std::to_string(l + 1) +
                                         (which == 'a' ? ".a" : ".b");
                net->units_.emplace_back(p, base, rng);
                ConvUnit& dst = net->units_.back();
                gather_slice(src.w.value, src.plan, a, dst.w.value);
                // theta top-left sub-block
                const int kd = src.plan.k_max * src.plan.k_max;
                const int k2 = a.k * a.k;
                for (int i = 0; i < k2; ++i)
                    std::memcpy(dst.theta.value.data() + static_cast<int64_t>(i) * k2,
                                src.theta.value.data() + static_cast<int64_t>(i) * kd,
                                sizeof(float) * static_cast<size_t>(k2));
                dst.bn_gamma.value = copy_vec(src.bn_gamma.value, a.out_c);
                dst.bn_gamma.grad = Tensor({a.out_c});
                dst.bn_beta.value = copy_vec(src.bn_beta.value, a.out_c);
                dst.bn_beta.grad = Tensor({a.out_c});
                dst.bn_mean = copy_vec(src.bn_mean, a.out_c);
                dst.bn_var = copy_vec(src.bn_var, a.out_c);
                dst.rs_shift.value = copy_vec(src.rs_shift.value, a.in_c);
                dst.rs_shift.grad = Tensor({a.in_c});
                dst.pr_gamma.value = copy_vec(src.pr_gamma.value, a.out_c);
                dst.pr_gamma.grad = Tensor({a.out_c});
                dst.pr_beta.value = copy_vec(src.pr_beta.value, a.out_c);
                dst.pr_beta.grad = Tensor({a.out_c});
                dst.pr_zeta.value = copy_vec(src.pr_zeta.value, a.out_c);
                dst.pr_zeta.grad = Tensor({a.out_c});
            }
            prev = lc.channels;
        }
    }
    net->head_.w.name = "head.w";
    net->head_.w.value = Tensor({space_.num_classes, prev});
    net->head_.w.grad = Tensor(net->head_.w.value.shape());
    net->head_.w.decay = true;
    for (int o = 0; o < space_.num_classes; ++o)
        std::memcpy(net->head_.w.value.data() + static_cast<int64_t>(o) * prev,
                    head_.w.value.data() + o * head_.w.value.dim(1),
                    sizeof(float) * static_cast<size_t>(prev));
    net->head_.bias = head_.bias;
    net->head_.bias.grad = Tensor({space_.num_classes});
    net->recalib_.assign(net->units_.size() + 1, {});
    net->active_ = arch;
    return SubnetBundle{net, arch};
}

void Supernet::bn_recalib_begin() {
    recalib_.assign(units_.size() + 1, {});
    recalib_active_ = true;
}

void Supernet::bn_recalib_end() {
    if (!recalib_active_) throw ConfigError("bn_recalib_end without begin");
    auto write = [](BnAccum& a, Tensor& mean, Tensor& var) {
        if (a.batches == 0) return;
        for (size_t c = 0; c < a.sum.size(); ++c) {
            mean.at(static_cast<int64_t>(c)) = static_cast<float>(a.sum[c] / static_cast<double>(a.batches));
            var.at(static_cast<int64_t>(c)) = static_cast<float>(a.sumsq[c] / static_cast<double>(a.batches));
        }
    };
    for (size_t i = 0; i < units_.size(); ++i) write(recalib_[i], units_[i].bn_mean, units_[i].bn_var);
    write(recalib_[units_.size()], stem_.bn_mean, stem_.bn_var);
    recalib_.assign(units_.size() + 1, {});
    recalib_active_ = false;
}

}  // namespace nasbnn
