#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <nlohmann/json_fwd.hpp>

#include "nasbnn/rng.hpp"

namespace nasbnn {

using BigInt = boost::multiprecision::cpp_int;

// One searchable stage: a run of separable blocks sharing choice sets.
// The stride applies at the stage's first block; later blocks run stride 1.
struct StageSpec {
    std::vector<int> depth_choices;    // sorted ascending
    std::vector<int> channel_choices;  // strictly increasing
    std::vector<int> kernel_choices;   // odd, sorted ascending
    std::vector<int> group_choices;    // sorted ascending
    int stride = 1;

    int max_depth() const { return depth_choices.back(); }
    int min_depth() const { return depth_choices.front(); }
    int max_channels() const { return channel_choices.back(); }
    int min_channels() const { return channel_choices.front(); }
    int max_kernel() const { return kernel_choices.back(); }
    int min_kernel() const { return kernel_choices.front(); }
    int min_groups() const { return group_choices.front(); }
    int max_groups() const { return group_choices.back(); }
};

struct SearchSpace {
    std::string space_id;
    std::vector<int> stem_channel_choices;  // ordered ascending
    int stem_kernel = 3;
    int stem_stride = 2;
    std::vector<StageSpec> stages;
    int input_resolution = 224;
    int num_classes = 1000;

    int num_stages() const { return static_cast<int>(stages.size()); }
    int max_stem() const { return stem_channel_choices.back(); }
    int min_stem() const { return stem_channel_choices.front(); }
};

// Checks structural sanity of the space itself (non-empty choice sets,
// strictly increasing channels, divisibility, odd kernels). Throws
// ConfigError naming the bad field.
void check_space(const SearchSpace& space);

struct LayerChoice {
    int channels = 0;
    int kernel = 0;
    int groups = 0;

    bool operator==(const LayerChoice&) const = default;
};

struct Architecture {
    int stem_channels = 0;
    std::vector<std::vector<LayerChoice>> stage_layers;
    std::string space_id;

    bool operator==(const Architecture&) const = default;
    int depth(int stage) const { return static_cast<int>(stage_layers[static_cast<size_t>(stage)].size()); }
};

struct Violation {
    std::string where;  // e.g. "stage 3, layer 2, channels"
    std::string what;
};

struct ValidationResult {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
    std::string str() const;
};

// Membership in every choice set, group divisibility (both the layer's own
// width and the width of the tensor the grouped conv actually partitions,
// i.e. the previous layer's width), and the non-decreasing channel chain
// starting at the stem.
ValidationResult validate(const SearchSpace& space, const Architecture& arch);

// Largest: max depth/channels/kernel, min groups (densest convolution).
// Smallest: the opposite extreme.
Architecture largest(const SearchSpace& space);
Architecture smallest(const SearchSpace& space);

// Exact architecture count. With apply_nd the count covers only
// architectures whose stem+layer channel sequence is non-decreasing,
// via a DP over (position, last channel value).
BigInt cardinality(const SearchSpace& space, bool apply_nd);

// Exactly uniform sampling over the (ND-)valid set using the same DP
// weights; no rejection. Deterministic for a fixed rng state.
class UniformSampler {
public:
    UniformSampler(const SearchSpace& space, bool apply_nd = true);
    Architecture sample(Rng& rng) const;
    const BigInt& total() const { return total_; }

private:
    struct StageTables;
    const SearchSpace space_;
    bool apply_nd_;
    BigInt total_;
    std::vector<StageTables> tables_;
    std::vector<BigInt> stem_weights_;

public:
    ~UniformSampler();
    UniformSampler(const UniformSampler&) = delete;
    UniformSampler& operator=(const UniformSampler&) = delete;
};

Architecture sample_uniform(const SearchSpace& space, Rng& rng, bool apply_nd = true);

// Evolutionary operators. Each gene (stage depth; per-layer channel, kernel,
// groups) is resampled with probability `prob` (mutate) or inherited from a
// random parent (crossover); the result is repaired to satisfy the
// non-decreasing constraint by raising channels forward.
Architecture mutate(const SearchSpace& space, const Architecture& arch, double prob, Rng& rng);
Architecture crossover(const SearchSpace& space, const Architecture& a, const Architecture& b, Rng& rng);

// Stable content hash (used for tie-breaking and manifests).
uint64_t arch_hash(const Architecture& arch);

// Bundled spaces.
SearchSpace paper_space();
SearchSpace desk_cifar_space();

// JSON interchange.
nlohmann::json arch_to_json(const Architecture& arch);
Architecture arch_from_json(const nlohmann::json& j);
nlohmann::json space_to_json(const SearchSpace& space);
SearchSpace space_from_json(const nlohmann::json& j);

// Draws uniformly from [0, upper); needs upper > 0.
BigInt uniform_bigint(Rng& rng, const BigInt& upper);

}  // namespace nasbnn
