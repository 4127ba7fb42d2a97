#include "nasbnn/searchspace.hpp"

#include <algorithm>
#include <cassert>
#include <iostream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nasbnn/errors.hpp"

namespace nasbnn {

using json = nlohmann::json;

namespace {

bool contains(const std::vector<int>& v, int x) {
    return std::find(v.begin(), v.end(), x) != v.end();
}

// Valid group choices for a layer whose grouped conv partitions `prev`
// channels and outputs toward a layer width `own`.
std::vector<int> valid_groups(const StageSpec& st, int prev, int own) {
    std::vector<int> out;
    for (int g : st.group_choices)
        if (own % g == 0 && prev % g == 0) out.push_back(g);
    return out;
}

// Number of (kernel, groups) combinations for a layer transition.
int64_t kg_count(const StageSpec& st, int prev, int own) {
    int64_t groups = 0;
    for (int g : st.group_choices)
        if (own % g == 0 && prev % g == 0) ++groups;
    return static_cast<int64_t>(st.kernel_choices.size()) * groups;
}

}  // namespace

void check_space(const SearchSpace& space) {
    auto bad = [](const std::string& what) { throw ConfigError("search space: " + what); };
    if (space.stem_channel_choices.empty()) bad("stem_channel_choices is empty");
    if (!std::is_sorted(space.stem_channel_choices.begin(), space.stem_channel_choices.end()))
        bad("stem_channel_choices not ascending");
    if (space.stem_stride < 1) bad("stem_stride must be >= 1");
    if (space.stem_kernel < 1 || space.stem_kernel % 2 == 0) bad("stem_kernel must be odd");
    if (space.stages.empty()) bad("no stages");
    if (space.input_resolution < 1) bad("input_resolution must be >= 1");
    if (space.num_classes < 2) bad("num_classes must be >= 2");
    for (size_t s = 0; s < space.stages.size(); ++s) {
        const StageSpec& st = space.stages[s];
        const std::string tag = "stage " + std::to_string(s + 1) + ": ";
        if (st.depth_choices.empty()) bad(tag + "depth_choices is empty");
        if (st.channel_choices.empty()) bad(tag + "channel_choices is empty");
        if (st.kernel_choices.empty()) bad(tag + "kernel_choices is empty");
        if (st.group_choices.empty()) bad(tag + "group_choices is empty");
        for (int d : st.depth_choices)
            if (d < 1) bad(tag + "depth must be >= 1");
        if (!std::is_sorted(st.depth_choices.begin(), st.depth_choices.end()))
            bad(tag + "depth_choices not ascending");
        for (size_t i = 1; i < st.channel_choices.size(); ++i)
            if (st.channel_choices[i] <= st.channel_choices[i - 1])
                bad(tag + "channel_choices not strictly increasing");
        for (int k : st.kernel_choices)
            if (k < 1 || k % 2 == 0) bad(tag + "kernel choices must be odd positive");
        for (int g : st.group_choices)
            if (g < 1) bad(tag + "group choices must be positive");
        for (int c : st.channel_choices)
            for (int g : st.group_choices)
                if (c % g != 0)
                    bad(tag + "channel " + std::to_string(c) + " not divisible by groups " +
                        std::to_string(g));
        if (st.stride < 1) bad(tag + "stride must be >= 1");
        if (s + 1 < space.stages.size()) {
            if (st.max_channels() > space.stages[s + 1].min_channels())
                std::cerr << "warning: search space '" << space.space_id << "': stage "
                          << (s + 1) << " max channels " << st.max_channels()
                          << " exceeds stage " << (s + 2) << " min channels "
                          << space.stages[s + 1].min_channels()
                          << "; the non-decreasing constraint will couple these stages\n";
        }
    }
    if (space.max_stem() > space.stages[0].min_channels())
        std::cerr << "warning: search space '" << space.space_id
                  << "': stem max exceeds stage 1 min channels\n";
}

std::string ValidationResult::str() const {
    if (ok()) return "ok";
    std::ostringstream os;
    for (size_t i = 0; i < violations.size(); ++i) {
        if (i) os << "; ";
        os << violations[i].where << ": " << violations[i].what;
    }
    return os.str();
}

ValidationResult validate(const SearchSpace& space, const Architecture& arch) {
    ValidationResult r;
    auto add = [&](const std::string& where, const std::string& what) {
        r.violations.push_back({where, what});
    };
    if (!contains(space.stem_channel_choices, arch.stem_channels))
        add("stem", "channels " + std::to_string(arch.stem_channels) + " not a stem choice");
    if (arch.stage_layers.size() != space.stages.size()) {
        add("stages", "expected " + std::to_string(space.stages.size()) + " stages, got " +
                          std::to_string(arch.stage_layers.size()));
        return r;
    }
    int prev = arch.stem_channels;
    for (size_t s = 0; s < space.stages.size(); ++s) {
        const StageSpec& st = space.stages[s];
        const auto& layers = arch.stage_layers[s];
        const std::string stag = "stage " + std::to_string(s + 1);
        if (!contains(st.depth_choices, static_cast<int>(layers.size())))
            add(stag, "depth " + std::to_string(layers.size()) + " not a depth choice");
        for (size_t l = 0; l < layers.size(); ++l) {
            const LayerChoice& lc = layers[l];
            const std::string where = stag + ", layer " + std::to_string(l + 1);
            if (!contains(st.channel_choices, lc.channels))
                add(where + ", channels", std::to_string(lc.channels) + " not a channel choice");
            if (!contains(st.kernel_choices, lc.kernel))
                add(where + ", kernel", std::to_string(lc.kernel) + " not a kernel choice");
            if (!contains(st.group_choices, lc.groups))
                add(where + ", groups", std::to_string(lc.groups) + " not a group choice");
            if (lc.groups > 0 && lc.channels % lc.groups != 0)
                add(where + ", groups", "channels " + std::to_string(lc.channels) +
                                            " not divisible by groups " + std::to_string(lc.groups));
            if (lc.groups > 0 && prev > 0 && prev % lc.groups != 0)
                add(where + ", groups", "input width " + std::to_string(prev) +
                                            " not divisible by groups " + std::to_string(lc.groups));
            if (lc.channels < prev) {
                std::string lhs = l == 0 ? (s == 0 ? std::string("stem")
                                                   : "stage " + std::to_string(s) + " last layer")
                                         : "layer " + std::to_string(l);
                add(where, "ND violated: channels " + std::to_string(lc.channels) + " < " +
                               std::to_string(prev) + " of " + lhs);
            }
            prev = lc.channels;
        }
    }
    return r;
}

namespace {

Architecture extreme(const SearchSpace& space, bool big) {
    Architecture a;
    a.space_id = space.space_id;
    a.stem_channels = big ? space.max_stem() : space.min_stem();
    int prev = a.stem_channels;
    for (const StageSpec& st : space.stages) {
        std::vector<LayerChoice> layers;
        int depth = big ? st.max_depth() : st.min_depth();
        for (int l = 0; l < depth; ++l) {
            LayerChoice lc;
            lc.channels = big ? st.max_channels() : st.min_channels();
            lc.kernel = big ? st.max_kernel() : st.min_kernel();
            std::vector<int> groups = valid_groups(st, prev, lc.channels);
            if (groups.empty())
                throw ConfigError("no valid group choice for width " + std::to_string(lc.channels) +
                                  " fed by " + std::to_string(prev));
            lc.groups = big ? groups.front() : groups.back();
            layers.push_back(lc);
            prev = lc.channels;
        }
        a.stage_layers.push_back(std::move(layers));
    }
    return a;
}

}  // namespace

Architecture largest(const SearchSpace& space) { return extreme(space, true); }
Architecture smallest(const SearchSpace& space) { return extreme(space, false); }

// ---------------------------------------------------------------------------
// Counting and exact-uniform sampling.
//
// Both walk the same DP: the state after any layer is the last channel
// width, and a transition into a layer with width c from width p carries
// multiplicity |kernels| * |valid groups| and is admissible (under ND) only
// when c >= p. Counts are exact big integers.
// ---------------------------------------------------------------------------

BigInt cardinality(const SearchSpace& space, bool apply_nd) {
    check_space(space);
    std::map<int, BigInt> dist;
    for (int c : space.stem_channel_choices) dist[c] += 1;
    for (const StageSpec& st : space.stages) {
        std::map<int, BigInt> next;
        const auto& C = st.channel_choices;
        for (const auto& [v, w] : dist) {
            for (int d : st.depth_choices) {
                // f[c index] = weighted ways to reach layer j with width c
                std::vector<BigInt> f(C.size(), 0);
                for (size_t ci = 0; ci < C.size(); ++ci) {
                    if (apply_nd && C[ci] < v) continue;
                    f[ci] = kg_count(st, v, C[ci]);
                }
                for (int j = 1; j < d; ++j) {
                    std::vector<BigInt> g(C.size(), 0);
                    for (size_t ci = 0; ci < C.size(); ++ci) {
                        for (size_t pi = 0; pi < C.size(); ++pi) {
                            if (f[pi] == 0) continue;
                            if (apply_nd && C[ci] < C[pi]) continue;
                            g[ci] += f[pi] * kg_count(st, C[pi], C[ci]);
                        }
                    }
                    f.swap(g);
                }
                for (size_t ci = 0; ci < C.size(); ++ci)
                    if (f[ci] != 0) next[C[ci]] += w * f[ci];
            }
        }
        dist.swap(next);
    }
    BigInt total = 0;
    for (const auto& [v, w] : dist) total += w;
    return total;
}

struct UniformSampler::StageTables {
    // For each depth choice d: U[d][j][ci] = ways to complete layers j+1..d-1
    // of this stage and all later stages, given layer j has channel C[ci].
    std::vector<std::vector<std::vector<BigInt>>> suffix;
    // ways_from[v] = total completions of this and later stages from incoming
    // width v (summed over depth choices).
    std::map<int, BigInt> ways_from;
};

UniformSampler::UniformSampler(const SearchSpace& space, bool apply_nd)
    : space_(space), apply_nd_(apply_nd) {
    check_space(space_);
    const int S = space_.num_stages();
    tables_.resize(static_cast<size_t>(S));
    // Incoming widths for stage s: stem choices (s==0) or stage s-1 channels.
    for (int s = S - 1; s >= 0; --s) {
        const StageSpec& st = space_.stages[static_cast<size_t>(s)];
        const auto& C = st.channel_choices;
        StageTables& tb = tables_[static_cast<size_t>(s)];
        tb.suffix.resize(st.depth_choices.size());
        for (size_t di = 0; di < st.depth_choices.size(); ++di) {
            const int d = st.depth_choices[di];
            auto& U = tb.suffix[di];
            U.assign(static_cast<size_t>(d), std::vector<BigInt>(C.size(), 0));
            for (size_t ci = 0; ci < C.size(); ++ci) {
                if (s + 1 < S) {
                    auto it = tables_[static_cast<size_t>(s + 1)].ways_from.find(C[ci]);
                    U[static_cast<size_t>(d - 1)][ci] =
                        it == tables_[static_cast<size_t>(s + 1)].ways_from.end() ? 0 : it->second;
                } else {
                    U[static_cast<size_t>(d - 1)][ci] = 1;
                }
            }
            for (int j = d - 2; j >= 0; --j) {
                for (size_t ci = 0; ci < C.size(); ++ci) {
                    BigInt acc = 0;
                    for (size_t ni = 0; ni < C.size(); ++ni) {
                        if (apply_nd_ && C[ni] < C[ci]) continue;
                        BigInt m = kg_count(st, C[ci], C[ni]);
                        if (m != 0) acc += m * U[static_cast<size_t>(j + 1)][ni];
                    }
                    U[static_cast<size_t>(j)][ci] = acc;
                }
            }
        }
        std::vector<int> incoming =
            s == 0 ? space_.stem_channel_choices
                   : space_.stages[static_cast<size_t>(s - 1)].channel_choices;
        for (int v : incoming) {
            BigInt acc = 0;
            for (size_t di = 0; di < st.depth_choices.size(); ++di) {
                const auto& U0 = tb.suffix[di][0];
                for (size_t ci = 0; ci < C.size(); ++ci) {
                    if (apply_nd_ && C[ci] < v) continue;
                    BigInt m = kg_count(st, v, C[ci]);
                    if (m != 0) acc += m * U0[ci];
                }
            }
            tb.ways_from[v] = acc;
        }
    }
    total_ = 0;
    stem_weights_.clear();
    for (int c : space_.stem_channel_choices) {
        BigInt w = tables_[0].ways_from.at(c);
        stem_weights_.push_back(w);
        total_ += w;
    }
}

UniformSampler::~UniformSampler() = default;

BigInt uniform_bigint(Rng& rng, const BigInt& upper) {
    assert(upper > 0);
    if (upper == 1) return BigInt(0);
    const unsigned bits = boost::multiprecision::msb(upper) + 1;
    for (;;) {
        BigInt r = 0;
        unsigned remaining = bits;
        while (remaining > 0) {
            const unsigned take = remaining < 64 ? remaining : 64;
            uint64_t chunk = rng();
            if (take < 64) chunk &= (uint64_t{1} << take) - 1;
            r <<= take;
            r |= chunk;
            remaining -= take;
        }
        if (r < upper) return r;
    }
}

namespace {

size_t weighted_pick(Rng& rng, const std::vector<BigInt>& w, const BigInt& total) {
    BigInt r = uniform_bigint(rng, total);
    BigInt acc = 0;
    for (size_t i = 0; i < w.size(); ++i) {
        acc += w[i];
        if (r < acc) return i;
    }
    assert(false && "weights do not sum to total");
    return w.size() - 1;
}

}  // namespace

Architecture UniformSampler::sample(Rng& rng) const {
    if (total_ == 0) throw ConfigError("search space has no valid architecture");
    Architecture a;
    a.space_id = space_.space_id;
    const size_t stem_idx = weighted_pick(rng, stem_weights_, total_);
    a.stem_channels = space_.stem_channel_choices[stem_idx];
    int v = a.stem_channels;
    for (size_t s = 0; s < space_.stages.size(); ++s) {
        const StageSpec& st = space_.stages[s];
        const auto& C = st.channel_choices;
        const StageTables& tb = tables_[s];
        // depth ∝ ways through this depth branch
        std::vector<BigInt> dw(st.depth_choices.size(), 0);
        BigInt dtot = 0;
        for (size_t di = 0; di < st.depth_choices.size(); ++di) {
            const auto& U0 = tb.suffix[di][0];
            for (size_t ci = 0; ci < C.size(); ++ci) {
                if (apply_nd_ && C[ci] < v) continue;
                BigInt m = kg_count(st, v, C[ci]);
                if (m != 0) dw[di] += m * U0[ci];
            }
            dtot += dw[di];
        }
        const size_t di = weighted_pick(rng, dw, dtot);
        const int d = st.depth_choices[di];
        std::vector<LayerChoice> layers;
        for (int j = 0; j < d; ++j) {
            const auto& Uj = tb.suffix[di][static_cast<size_t>(j)];
            std::vector<BigInt> cw(C.size(), 0);
            BigInt ctot = 0;
            for (size_t ci = 0; ci < C.size(); ++ci) {
                if (apply_nd_ && C[ci] < v) continue;
                BigInt m = kg_count(st, v, C[ci]);
                if (m != 0) cw[ci] = m * Uj[ci];
                ctot += cw[ci];
            }
            const size_t ci = weighted_pick(rng, cw, ctot);
            LayerChoice lc;
            lc.channels = C[ci];
            lc.kernel = st.kernel_choices[std::uniform_int_distribution<size_t>(
                0, st.kernel_choices.size() - 1)(rng)];
            std::vector<int> groups = valid_groups(st, v, lc.channels);
            lc.groups = groups[std::uniform_int_distribution<size_t>(0, groups.size() - 1)(rng)];
            layers.push_back(lc);
            v = lc.channels;
        }
        a.stage_layers.push_back(std::move(layers));
    }
    return a;
}

Architecture sample_uniform(const SearchSpace& space, Rng& rng, bool apply_nd) {
    UniformSampler sampler(space, apply_nd);
    return sampler.sample(rng);
}

namespace {

int pick(const std::vector<int>& choices, Rng& rng) {
    return choices[std::uniform_int_distribution<size_t>(0, choices.size() - 1)(rng)];
}

// Raises channels forward to restore the non-decreasing chain, then fixes
// group divisibility against the repaired widths. Never lowers a channel.
Architecture repair(const SearchSpace& space, Architecture a) {
    int prev = a.stem_channels;
    for (size_t s = 0; s < a.stage_layers.size(); ++s) {
        const StageSpec& st = space.stages[s];
        for (LayerChoice& lc : a.stage_layers[s]) {
            if (lc.channels < prev) {
                auto it = std::lower_bound(st.channel_choices.begin(), st.channel_choices.end(), prev);
                if (it == st.channel_choices.end())
                    throw ConfigError("irreparable architecture: no channel choice >= " +
                                      std::to_string(prev) + " in stage " + std::to_string(s + 1));
                lc.channels = *it;
            }
            if (lc.channels % lc.groups != 0 || prev % lc.groups != 0) {
                std::vector<int> groups = valid_groups(st, prev, lc.channels);
                if (groups.empty())
                    throw ConfigError("irreparable architecture: no valid groups in stage " +
                                      std::to_string(s + 1));
                // prefer the largest valid choice not above the current one
                int chosen = groups.front();
                for (int g : groups)
                    if (g <= lc.groups) chosen = g;
                lc.groups = chosen;
            }
            prev = lc.channels;
        }
    }
    return a;
}

}  // namespace

Architecture mutate(const SearchSpace& space, const Architecture& arch, double prob, Rng& rng) {
    Architecture a = arch;
    a.space_id = space.space_id;
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng) < prob) a.stem_channels = pick(space.stem_channel_choices, rng);
    for (size_t s = 0; s < space.stages.size(); ++s) {
        const StageSpec& st = space.stages[s];
        int depth = static_cast<int>(a.stage_layers[s].size());
        if (coin(rng) < prob) depth = pick(st.depth_choices, rng);
        std::vector<LayerChoice> layers;
        for (int j = 0; j < depth; ++j) {
            LayerChoice lc;
            if (j < static_cast<int>(a.stage_layers[s].size())) {
                lc = a.stage_layers[s][static_cast<size_t>(j)];
                if (coin(rng) < prob) lc.channels = pick(st.channel_choices, rng);
                if (coin(rng) < prob) lc.kernel = pick(st.kernel_choices, rng);
                if (coin(rng) < prob) lc.groups = pick(st.group_choices, rng);
            } else {
                lc.channels = pick(st.channel_choices, rng);
                lc.kernel = pick(st.kernel_choices, rng);
                lc.groups = pick(st.group_choices, rng);
            }
            layers.push_back(lc);
        }
        a.stage_layers[s] = std::move(layers);
    }
    return repair(space, a);
}

Architecture crossover(const SearchSpace& space, const Architecture& pa, const Architecture& pb,
                       Rng& rng) {
    Architecture a;
    a.space_id = space.space_id;
    std::uniform_int_distribution<int> coin(0, 1);
    a.stem_channels = coin(rng) ? pa.stem_channels : pb.stem_channels;
    a.stage_layers.resize(space.stages.size());
    for (size_t s = 0; s < space.stages.size(); ++s) {
        const auto& la = pa.stage_layers[s];
        const auto& lb = pb.stage_layers[s];
        const int depth = coin(rng) ? static_cast<int>(la.size()) : static_cast<int>(lb.size());
        std::vector<LayerChoice> layers;
        for (int j = 0; j < depth; ++j) {
            const bool has_a = j < static_cast<int>(la.size());
            const bool has_b = j < static_cast<int>(lb.size());
            auto gene = [&](auto field) {
                if (has_a && has_b) return coin(rng) ? la[static_cast<size_t>(j)].*field
                                                     : lb[static_cast<size_t>(j)].*field;
                return has_a ? la[static_cast<size_t>(j)].*field : lb[static_cast<size_t>(j)].*field;
            };
            LayerChoice lc;
            lc.channels = gene(&LayerChoice::channels);
            lc.kernel = gene(&LayerChoice::kernel);
            lc.groups = gene(&LayerChoice::groups);
            layers.push_back(lc);
        }
        a.stage_layers[s] = std::move(layers);
    }
    return repair(space, a);
}

uint64_t arch_hash(const Architecture& arch) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    auto mix = [&h](int v) {
        for (int i = 0; i < 4; ++i) {
            h ^= static_cast<uint64_t>((v >> (8 * i)) & 0xff);
            h *= 1099511628211ULL;
        }
    };
    mix(arch.stem_channels);
    for (const auto& layers : arch.stage_layers) {
        mix(static_cast<int>(layers.size()));
        for (const LayerChoice& lc : layers) {
            mix(lc.channels);
            mix(lc.kernel);
            mix(lc.groups);
        }
    }
    return h;
}

SearchSpace paper_space() {
    SearchSpace s;
    s.space_id = "paper";
    s.stem_channel_choices = {24, 32, 48};
    s.stem_kernel = 3;
    s.stem_stride = 2;
    s.input_resolution = 224;
    s.num_classes = 1000;
    s.stages = {
        {{2, 3}, {48, 64, 96}, {3}, {1}, 1},
        {{2, 3}, {96, 128, 192}, {3, 5}, {1, 2}, 2},
        {{2, 3}, {192, 256, 384}, {3, 5}, {2, 4}, 2},
        {{8, 9}, {384, 512, 768}, {3, 5}, {4, 8}, 2},
        {{2, 3}, {768, 1024, 1536}, {3, 5}, {8, 16}, 2},
    };
    return s;
}

SearchSpace desk_cifar_space() {
    SearchSpace s;
    s.space_id = "desk-cifar";
    s.stem_channel_choices = {6, 8, 12};
    s.stem_kernel = 3;
    s.stem_stride = 1;
    s.input_resolution = 32;
    s.num_classes = 10;
    s.stages = {
        {{2, 3}, {12, 16, 24}, {3}, {1}, 1},
        {{2, 3}, {24, 32, 48}, {3, 5}, {1, 2}, 1},
        {{2, 3}, {48, 64, 96}, {3, 5}, {2, 4}, 2},
        {{3, 4}, {96, 128, 192}, {3, 5}, {4, 8}, 2},
        {{2, 3}, {192, 256, 384}, {3, 5}, {8, 16}, 2},
    };
    return s;
}

json arch_to_json(const Architecture& arch) {
    json stages = json::array();
    for (const auto& layers : arch.stage_layers) {
        json jl = json::array();
        for (const LayerChoice& lc : layers)
            jl.push_back({{"c", lc.channels}, {"k", lc.kernel}, {"g", lc.groups}});
        stages.push_back({{"layers", jl}});
    }
    return json{{"stem_channels", arch.stem_channels}, {"stages", stages},
                {"space_id", arch.space_id}};
}

Architecture arch_from_json(const json& j) {
    try {
        Architecture a;
        a.stem_channels = j.at("stem_channels").get<int>();
        a.space_id = j.value("space_id", "");
        for (const auto& js : j.at("stages")) {
            std::vector<LayerChoice> layers;
            for (const auto& jl : js.at("layers"))
                layers.push_back({jl.at("c").get<int>(), jl.at("k").get<int>(),
                                  jl.at("g").get<int>()});
            a.stage_layers.push_back(std::move(layers));
        }
        return a;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed architecture JSON: ") + e.what());
    }
}

json space_to_json(const SearchSpace& space) {
    json stages = json::array();
    for (const StageSpec& st : space.stages)
        stages.push_back({{"depths", st.depth_choices},
                          {"channels", st.channel_choices},
                          {"kernels", st.kernel_choices},
                          {"groups", st.group_choices},
                          {"stride", st.stride}});
    return json{{"space_id", space.space_id},
                {"stem", {{"channels", space.stem_channel_choices},
                          {"kernel", space.stem_kernel},
                          {"stride", space.stem_stride}}},
                {"stages", stages},
                {"input_resolution", space.input_resolution},
                {"num_classes", space.num_classes}};
}

SearchSpace space_from_json(const json& j) {
    try {
        SearchSpace s;
        s.space_id = j.at("space_id").get<std::string>();
        s.stem_channel_choices = j.at("stem").at("channels").get<std::vector<int>>();
        s.stem_kernel = j.at("stem").value("kernel", 3);
        s.stem_stride = j.at("stem").at("stride").get<int>();
        for (const auto& js : j.at("stages")) {
            StageSpec st;
            st.depth_choices = js.at("depths").get<std::vector<int>>();
            st.channel_choices = js.at("channels").get<std::vector<int>>();
            st.kernel_choices = js.at("kernels").get<std::vector<int>>();
            st.group_choices = js.at("groups").get<std::vector<int>>();
            st.stride = js.at("stride").get<int>();
            s.stages.push_back(std::move(st));
        }
        s.input_resolution = j.at("input_resolution").get<int>();
        s.num_classes = j.at("num_classes").get<int>();
        check_space(s);
        return s;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed search space JSON: ") + e.what());
    }
}

}  // namespace nasbnn
