#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nasbnn/searchspace.hpp"

namespace nasbnn {

// Operation counts at the three precisions, one multiply-accumulate = one
// operation. The combined total is FLOPs + Int8OPs/8 + BOPs/64, kept exact
// in 1/64-op units.
struct CostBreakdown {
    uint64_t flops = 0;
    uint64_t int8_ops = 0;
    uint64_t bops = 0;

    uint64_t total_64ths() const { return 64 * flops + 8 * int8_ops + bops; }
    double total_ops() const { return static_cast<double>(total_64ths()) / 64.0; }
    double total_mops() const { return total_ops() / 1e6; }

    CostBreakdown& operator+=(const CostBreakdown& o) {
        flops += o.flops;
        int8_ops += o.int8_ops;
        bops += o.bops;
        return *this;
    }
};

// "M OPs" with two decimals, rounded half-up from the exact total.
std::string format_mops(const CostBreakdown& c);

struct LayerCostRow {
    int stage = 0;  // 0 = stem, 1..S = stages, S+1 = head
    int layer = 0;
    std::string type;  // stem | conv_a | conv_b | avgpool | linear
    int in_c = 0, out_c = 0, k = 0, g = 0;
    int h = 0, w = 0;  // output spatial size
    uint64_t flops = 0, int8_ops = 0, bops = 0;
};

struct CostReport {
    std::vector<LayerCostRow> rows;
    CostBreakdown total;
};

// Cost of one architecture at a given input resolution. The stem conv is
// billed as Int8OPs, every separable-block conv as BOPs, the head (global
// average pool and classifier) as FLOPs. Normalization, binarization and
// shortcut element-wise work carries no MACs and is excluded from the
// totals; see README for the accounting.
CostReport count_ops(const SearchSpace& space, const Architecture& arch, int input_resolution);

std::string cost_report_csv(const CostReport& report);

struct ParamCount {
    uint64_t binary_params = 0;  // 1-bit conv weights
    uint64_t int8_params = 0;    // stem conv weights
    uint64_t fp_params = 0;      // BN, binarizer activations, classifier
    uint64_t model_size_bytes() const {
        return (binary_params + 7) / 8 + int8_params + 4 * fp_params;
    }
};

ParamCount count_params(const SearchSpace& space, const Architecture& arch);

}  // namespace nasbnn
