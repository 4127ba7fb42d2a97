#include "nasbnn/costmodel.hpp"

#include <sstream>

#include "nasbnn/errors.hpp"

namespace nasbnn {

namespace {

int conv_out_size(int r, int k, int stride) {
    // same-style padding k/2; kernels are odd
    return (r + 2 * (k / 2) - k) / stride + 1;
}

uint64_t u64(int64_t v) { return static_cast<uint64_t>(v); }

}  // namespace

std::string format_mops(const CostBreakdown& c) {
    // hundredths of a MOp, rounded half-up, printed without float rounding
    const uint64_t h = (c.total_64ths() * 100 + 32'000'000ULL) / 64'000'000ULL;
    std::ostringstream os;
    os << h / 100 << '.' << (h % 100 < 10 ? "0" : "") << h % 100;
    return os.str();
}

CostReport count_ops(const SearchSpace& space, const Architecture& arch, int input_resolution) {
    ValidationResult v = validate(space, arch);
    if (!v.ok()) throw ConfigError("count_ops: invalid architecture: " + v.str());
    int64_t downsample = space.stem_stride;
    for (const StageSpec& st : space.stages) downsample *= st.stride;
    if (input_resolution < downsample)
        throw ConfigError("count_ops: resolution " + std::to_string(input_resolution) +
                          " incompatible with total stride " + std::to_string(downsample));

    CostReport rep;
    int r = conv_out_size(input_resolution, space.stem_kernel, space.stem_stride);
    int prev_c = arch.stem_channels;
    {
        LayerCostRow row;
        row.stage = 0;
        row.layer = 0;
        row.type = "stem";
        row.in_c = 3;
        row.out_c = prev_c;
        row.k = space.stem_kernel;
        row.g = 1;
        row.h = row.w = r;
        row.int8_ops = u64(prev_c) * 3 * u64(space.stem_kernel) * u64(space.stem_kernel) *
                       u64(r) * u64(r);
        rep.rows.push_back(row);
    }
    for (size_t s = 0; s < space.stages.size(); ++s) {
        const StageSpec& st = space.stages[s];
        for (size_t l = 0; l < arch.stage_layers[s].size(); ++l) {
            const LayerChoice& lc = arch.stage_layers[s][l];
            const int stride = l == 0 ? st.stride : 1;
            const int out_r = conv_out_size(r, lc.kernel, stride);
            LayerCostRow ca;
            ca.stage = static_cast<int>(s) + 1;
            ca.layer = static_cast<int>(l) + 1;
            ca.type = "conv_a";
            ca.in_c = ca.out_c = prev_c;
            ca.k = lc.kernel;
            ca.g = lc.groups;
            ca.h = ca.w = out_r;
            ca.bops = u64(prev_c) * u64(prev_c / lc.groups) * u64(lc.kernel) * u64(lc.kernel) *
                      u64(out_r) * u64(out_r);
            rep.rows.push_back(ca);

            LayerCostRow cb;
            cb.stage = ca.stage;
            cb.layer = ca.layer;
            cb.type = "conv_b";
            cb.in_c = prev_c;
            cb.out_c = lc.channels;
            cb.k = 1;
            cb.g = 1;
            cb.h = cb.w = out_r;
            cb.bops = u64(lc.channels) * u64(prev_c) * u64(out_r) * u64(out_r);
            rep.rows.push_back(cb);

            r = out_r;
            prev_c = lc.channels;
        }
    }
    {
        LayerCostRow pool;
        pool.stage = static_cast<int>(space.stages.size()) + 1;
        pool.layer = 1;
        pool.type = "avgpool";
        pool.in_c = pool.out_c = prev_c;
        pool.h = pool.w = 1;
        pool.flops = u64(prev_c) * u64(r) * u64(r);
        rep.rows.push_back(pool);

        LayerCostRow fc;
        fc.stage = pool.stage;
        fc.layer = 2;
        fc.type = "linear";
        fc.in_c = prev_c;
        fc.out_c = space.num_classes;
        fc.h = fc.w = 1;
        fc.flops = u64(prev_c) * u64(space.num_classes) + u64(space.num_classes);
        rep.rows.push_back(fc);
    }
    for (const LayerCostRow& row : rep.rows) {
        rep.total.flops += row.flops;
        rep.total.int8_ops += row.int8_ops;
        rep.total.bops += row.bops;
    }
    return rep;
}

std::string cost_report_csv(const CostReport& report) {
    std::ostringstream os;
    os << "stage,layer,type,in_c,out_c,k,g,H,W,flops,int8_ops,bops\n";
    for (const LayerCostRow& r : report.rows)
        os << r.stage << ',' << r.layer << ',' << r.type << ',' << r.in_c << ',' << r.out_c << ','
           << r.k << ',' << r.g << ',' << r.h << ',' << r.w << ',' << r.flops << ',' << r.int8_ops
           << ',' << r.bops << '\n';
    return os.str();
}

ParamCount count_params(const SearchSpace& space, const Architecture& arch) {
    ValidationResult v = validate(space, arch);
    if (!v.ok()) throw ConfigError("count_params: invalid architecture: " + v.str());
    ParamCount p;
    int prev_c = arch.stem_channels;
    p.int8_params = u64(prev_c) * 3 * u64(space.stem_kernel) * u64(space.stem_kernel);
    p.fp_params += 2 * u64(prev_c);  // stem BN
    for (size_t s = 0; s < space.stages.size(); ++s) {
        for (const LayerChoice& lc : arch.stage_layers[s]) {
            p.binary_params += u64(prev_c) * u64(prev_c / lc.groups) * u64(lc.kernel) * u64(lc.kernel);
            p.binary_params += u64(lc.channels) * u64(prev_c);
            // BN gamma/beta after each conv
            p.fp_params += 2 * (u64(prev_c) + u64(lc.channels));
            // RSign shifts on each conv input
            p.fp_params += 2 * u64(prev_c);
            // RPReLU shift/slope/shift after each conv
            p.fp_params += 3 * (u64(prev_c) + u64(lc.channels));
            prev_c = lc.channels;
        }
    }
    p.fp_params += u64(prev_c) * u64(space.num_classes) + u64(space.num_classes);
    return p;
}

}  // namespace nasbnn
