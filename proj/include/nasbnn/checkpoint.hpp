#pragma once

#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "nasbnn/tensor.hpp"

namespace nasbnn {

// Named-tensor archive with a JSON metadata block. Binary layout:
//   magic "NBNC" | u32 version | u64 meta_len | meta (UTF-8 JSON)
//   | u64 count | { u32 name_len | name | u32 ndim | i64 dims... | f32 data }*
struct Checkpoint {
    nlohmann::json meta;
    std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const std::map<std::string, Tensor*>& tensors);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace nasbnn
