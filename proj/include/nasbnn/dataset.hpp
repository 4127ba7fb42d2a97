#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nasbnn/rng.hpp"
#include "nasbnn/tensor.hpp"

namespace nasbnn {

// Images stored as uint8 CHW; normalization happens at batch time.
struct Dataset {
    int num_classes = 0;
    int height = 0, width = 0;
    std::vector<uint8_t> images;
    std::vector<int> labels;
    float mean[3] = {0.5f, 0.5f, 0.5f};
    float stdev[3] = {0.25f, 0.25f, 0.25f};

    int64_t size() const { return static_cast<int64_t>(labels.size()); }
    int64_t image_bytes() const { return 3LL * height * width; }
};

struct DataBundle {
    Dataset train;
    Dataset test;
};

struct DatasetDesc {
    std::string kind = "synthetic";  // synthetic | cifar10 | folder
    std::string path;                // dataset root (cifar10, folder)
    int resolution = 32;
    int synthetic_train = 1920;
    int synthetic_test = 512;
    int classes = 10;
    uint64_t seed = 7;
    bool allow_download = false;
};

DataBundle ingest_dataset(const DatasetDesc& desc);

// Ten-ish class toy data: each class owns a few smooth random prototype
// fields; an image is one prototype plus pixel noise. Deterministic for a
// fixed seed.
Dataset synthetic_dataset(int n, int classes, int resolution, uint64_t seed);

// CIFAR-10 binary batches under <dir>/cifar-10-batches-bin; downloads and
// checks the archive when allowed and missing.
DataBundle load_cifar10(const std::string& dir, bool allow_download);

// ImageNet-style class-per-directory layout; images decoded and resized.
DataBundle load_image_folder(const std::string& dir, int resolution);

// Seeded class-balanced held-out split drawn from a training set.
struct ValSplit {
    std::vector<int64_t> indices;  // sorted
};

ValSplit build_val_split(const Dataset& train, int per_class, uint64_t seed);
std::vector<int64_t> train_indices_excluding(const Dataset& train, const ValSplit& split);

// Materializes a normalized float batch; optional pad-4-crop + horizontal
// flip augmentation.
void make_batch(const Dataset& ds, const int64_t* idx, int count, bool augment, Rng* aug_rng,
                Tensor& images, std::vector<int>& labels);

}  // namespace nasbnn
