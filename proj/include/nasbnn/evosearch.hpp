#pragma once

#include <vector>

#include "nasbnn/costmodel.hpp"
#include "nasbnn/dataset.hpp"
#include "nasbnn/supernet.hpp"

namespace nasbnn {

struct SearchConfig {
    int population = 128;
    int generations = 20;
    double parent_fraction = 0.25;
    double mutation_prob = 0.2;
    double crossover_fraction = 0.5;
    std::vector<double> ops_budgets_mops;  // ascending
    int calib_batches = 32;
    int batch_size = 64;
    uint64_t seed = 1;
};

struct ParetoEntry {
    Architecture arch;
    double ops_mops = 0.0;
    double acc = 0.0;
};

// Evaluation context shared by recalibration and accuracy estimation.
struct EvalContext {
    const Dataset* data = nullptr;
    std::vector<int64_t> calib_indices;  // training view (held-out removed)
    std::vector<int64_t> val_indices;    // held-out split
    int calib_batches = 32;
    int batch_size = 64;
    uint64_t seed = 1;
};

// Re-estimates the running BN statistics of the active subnet by forwarding
// calibration batches in BWBA mode with weights frozen.
void recalibrate_bn(Supernet& net, const Architecture& arch, const EvalContext& ctx,
                    int calib_batches);

// activate + recalibrate + top-1 on the held-out split (BWBA).
double evaluate(Supernet& net, const Architecture& arch, const EvalContext& ctx);

// Maximal non-dominated subset under (minimize ops, maximize acc); exact
// duplicates collapse to one entry; result ordered by ops ascending.
std::vector<ParetoEntry> pareto_filter(const std::vector<ParetoEntry>& entries);

struct SearchResult {
    std::vector<ParetoEntry> front;
    std::vector<ParetoEntry> evaluated;  // every candidate ever scored
};

// Budget-bucketed evolutionary search over the trained supernet. BN running
// statistics are snapshotted and restored, so the search leaves the
// checkpoint state untouched.
SearchResult evolve(Supernet& net, const SearchConfig& cfg, const EvalContext& ctx);

}  // namespace nasbnn
