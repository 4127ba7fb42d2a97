#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nasbnn/nn_ops.hpp"
#include "nasbnn/searchspace.hpp"
#include "nasbnn/tensor.hpp"

namespace nasbnn {

// Weight / activation treatment of one forward pass.
//   FWBA: full-precision weights, binary activations (the teacher).
//   BWBA: binary weights and activations (students, deployment).
//   FWFA: everything full-precision (ablation only).
enum class ExecMode { FWBA, BWBA, FWFA };
const char* exec_mode_name(ExecMode mode);
ExecMode exec_mode_from_name(const std::string& name);

struct SupernetConfig {
    bool alpha_scaling = true;  // scale binary weights by per-channel mean |w|
    bool stem_lsq = true;       // simulate the 8-bit stem with a learnable step
    uint64_t init_seed = 1;
};

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    bool decay = false;      // weight decay applies
    bool binarizer = false;  // theta / RSign / RPReLU: updated by student passes only
};

// Dense storage geometry of one elastic conv unit. 'a' is the searchable
// grouped kxk conv (width-preserving, carries the stage stride on the first
// block); 'b' is the fixed 1x1 conv that sets the layer's channel width.
struct UnitPlan {
    int stage = 0;  // 1-based
    int layer = 0;  // 1-based within the stage
    char which = 'a';
    int in_max = 0;
    int out_max = 0;
    int g_store = 1;  // groups the dense tensor is stored at (stage minimum)
    int k_max = 1;
    int stride = 1;
};

// Active slice of a unit for one subnet.
struct UnitActive {
    int in_c = 0, out_c = 0, k = 0, g = 0, stride = 1;
};

class ConvUnit {
public:
    ConvUnit(const UnitPlan& plan, const std::string& prefix, Rng& rng);

    UnitPlan plan;
    Param w;         // [out_max, in_max/g_store, k_max, k_max]
    Param theta;     // [k_max^2, k_max^2], identity at init
    Param bn_gamma, bn_beta;
    Param rs_shift;  // RSign thresholds, sized in_max
    Param pr_gamma, pr_beta, pr_zeta;  // RPReLU, sized out_max
    Tensor bn_mean, bn_var;  // running statistics (not learnable)

    std::vector<Param*> params();
};

struct UnitTrace {
    std::shared_ptr<Tensor> x_in;  // real-valued unit input
    Tensor xhat;                   // BN-normalized conv output
    std::vector<double> mean, var; // statistics used by this forward
    UnitActive act;
    int unit_index = -1;
};

struct StemTrace {
    std::shared_ptr<Tensor> x_in;
    Tensor xhat;
    std::vector<double> mean, var;
    int out_c = 0;
};

struct Trace {
    ExecMode mode = ExecMode::BWBA;
    bool bn_train = false;
    StemTrace stem;
    std::vector<UnitTrace> units;
    Tensor pooled;                     // [N, c_last] before the classifier
    std::shared_ptr<Tensor> features;  // last feature map
    Tensor logits;
    Architecture arch;
};

struct ForwardOptions {
    ExecMode mode = ExecMode::BWBA;
    bool bn_train = false;    // normalize with batch stats, update running stats
    bool bn_recalib = false;  // accumulate clean statistics instead (weights frozen)
};

struct BackwardOptions {
    bool accumulate_binarizer = true;  // false for the Bi-Teacher pass
};

// Standalone subnet weights: a materialized supernet plus its architecture.
class Supernet;
struct SubnetBundle {
    std::shared_ptr<Supernet> net;
    Architecture arch;
};

class Supernet {
public:
    Supernet(const SearchSpace& space, SupernetConfig cfg = {});

    Supernet(const Supernet&);
    Supernet& operator=(const Supernet&) = delete;
    Supernet(Supernet&&) = default;

    void activate(const Architecture& arch);
    void deactivate() { active_.reset(); }
    bool has_active() const { return active_.has_value(); }
    const Architecture& active_arch() const;

    // x: [N, 3, R, R] with R = the space's input resolution.
    Tensor forward(const Tensor& x, const ForwardOptions& opts, Trace* trace);
    void backward(const Trace& trace, const Tensor& dlogits, const BackwardOptions& opts = {});
    void zero_grads();

    std::vector<Param*> params();
    // Named tensors for checkpointing: parameter values plus BN running stats.
    std::map<std::string, Tensor*> state();

    // Materializes the sliced weights, BN statistics, binarizer parameters
    // and transformation sub-blocks of `arch` into a self-contained net that
    // reproduces BWBA forward bit-exactly. Works whether or not `arch` was
    // ever activated.
    SubnetBundle extract_subnet(const Architecture& arch) const;

    const SearchSpace& space() const { return space_; }
    const SupernetConfig& config() const { return cfg_; }
    bool materialized() const { return materialized_; }

    // BN recalibration: begin, run forwards with bn_recalib, then finalize;
    // running statistics of the active subnet's slices are replaced by the
    // aggregated batch statistics.
    void bn_recalib_begin();
    void bn_recalib_end();

    int64_t param_count() const;

    // Total number of BN-recalab/bn-train statistics slots; exposed for tests.
    const std::vector<ConvUnit>& units() const { return units_; }
    ConvUnit& unit(int i) { return units_[static_cast<size_t>(i)]; }

    struct StemBlock {
        Param w;  // [stem_max, 3, k, k]
        Param lsq_step;
        Param bn_gamma, bn_beta;
        Tensor bn_mean, bn_var;
    };
    StemBlock& stem() { return stem_; }
    struct Head {
        Param w;  // [classes, c_max]
        Param bias;
    };
    Head& head() { return head_; }

private:
    Supernet() = default;

    int unit_index(int stage, int layer, char which) const;
    void build(Rng& rng);

    SearchSpace space_;
    SupernetConfig cfg_;
    bool materialized_ = false;
    std::optional<Architecture> built_arch_;  // set for materialized nets
    std::optional<Architecture> active_;

    StemBlock stem_;
    std::vector<ConvUnit> units_;
    std::vector<int> stage_unit_base_;  // index of stage s, layer 0, conv_a
    Head head_;

    // recalibration accumulators, parallel to units_ (+1 for stem at back)
    struct BnAccum {
        std::vector<double> sum, sumsq;
        int64_t batches = 0;
    };
    std::vector<BnAccum> recalib_;
    bool recalib_active_ = false;

    friend struct SupernetTestPeer;
};

}  // namespace nasbnn
