#include "nasbnn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fetch.hpp"
#include "nasbnn/errors.hpp"

namespace fs = std::filesystem;

namespace nasbnn {

namespace {

uint8_t clamp_u8(double v) {
    return static_cast<uint8_t>(std::min(255.0, std::max(0.0, std::round(v))));
}

// Smooth random field: a coarse Gaussian grid upsampled bilinearly.
void smooth_field(int resolution, Rng& rng, std::vector<float>& out) {
    constexpr int kGrid = 4;
    std::normal_distribution<double> dist(0.0, 1.0);
    float grid[kGrid][kGrid];
    for (auto& row : grid)
        for (float& v : row) v = static_cast<float>(dist(rng));
    out.resize(static_cast<size_t>(resolution) * resolution);
    for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
            const double gy = static_cast<double>(y) / resolution * (kGrid - 1);
            const double gx = static_cast<double>(x) / resolution * (kGrid - 1);
            const int y0 = static_cast<int>(gy), x0 = static_cast<int>(gx);
            const int y1 = std::min(y0 + 1, kGrid - 1), x1 = std::min(x0 + 1, kGrid - 1);
            const double fy = gy - y0, fx = gx - x0;
            const double v = grid[y0][x0] * (1 - fy) * (1 - fx) + grid[y1][x0] * fy * (1 - fx) +
                             grid[y0][x1] * (1 - fy) * fx + grid[y1][x1] * fy * fx;
            out[static_cast<size_t>(y) * resolution + x] = static_cast<float>(v);
        }
    }
}

}  // namespace

Dataset synthetic_dataset(int n, int classes, int resolution, uint64_t seed) {
    if (n <= 0 || classes <= 1) throw DataError("synthetic dataset needs n > 0, classes > 1");
    constexpr int kModes = 3;
    constexpr double kSignal = 52.0;
    constexpr double kNoise = 36.0;
    Dataset ds;
    ds.num_classes = classes;
    ds.height = ds.width = resolution;
    ds.mean[0] = ds.mean[1] = ds.mean[2] = 0.5f;
    ds.stdev[0] = ds.stdev[1] = ds.stdev[2] = 0.25f;
    Rng proto_rng = make_rng(seed, 11);
    std::vector<std::vector<float>> protos;  // [class*modes*3] fields
    for (int c = 0; c < classes; ++c)
        for (int m = 0; m < kModes; ++m)
            for (int ch = 0; ch < 3; ++ch) {
                protos.emplace_back();
                smooth_field(resolution, proto_rng, protos.back());
            }
    Rng img_rng = make_rng(seed, 12);
    std::normal_distribution<double> noise(0.0, 1.0);
    const int64_t map = static_cast<int64_t>(resolution) * resolution;
    ds.images.resize(static_cast<size_t>(n) * 3 * map);
    ds.labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int label = i % classes;
        const int mode = static_cast<int>(img_rng() % kModes);
        ds.labels[static_cast<size_t>(i)] = label;
        for (int ch = 0; ch < 3; ++ch) {
            const auto& field = protos[static_cast<size_t>((label * kModes + mode) * 3 + ch)];
            uint8_t* dst = ds.images.data() + (static_cast<int64_t>(i) * 3 + ch) * map;
            for (int64_t p = 0; p < map; ++p)
                dst[p] = clamp_u8(128.0 + kSignal * field[static_cast<size_t>(p)] +
                                  kNoise * noise(img_rng));
        }
    }
    return ds;
}

namespace {

Dataset read_cifar_batches(const std::vector<fs::path>& files) {
    Dataset ds;
    ds.num_classes = 10;
    ds.height = ds.width = 32;
    ds.mean[0] = 0.4914f; ds.mean[1] = 0.4822f; ds.mean[2] = 0.4465f;
    ds.stdev[0] = 0.2470f; ds.stdev[1] = 0.2435f; ds.stdev[2] = 0.2616f;
    constexpr int64_t kRecord = 1 + 3072;
    for (const fs::path& f : files) {
        std::ifstream is(f, std::ios::binary);
        if (!is) throw DataError("cifar10: cannot open " + f.string());
        std::vector<char> bytes((std::istreambuf_iterator<char>(is)),
                                std::istreambuf_iterator<char>());
        if (bytes.size() % kRecord != 0)
            throw DataError("cifar10: corrupt batch file " + f.string());
        const int64_t records = static_cast<int64_t>(bytes.size()) / kRecord;
        for (int64_t r = 0; r < records; ++r) {
            const auto* rec = reinterpret_cast<const uint8_t*>(bytes.data()) + r * kRecord;
            ds.labels.push_back(rec[0]);
            ds.images.insert(ds.images.end(), rec + 1, rec + kRecord);
        }
    }
    return ds;
}

}  // namespace

DataBundle load_cifar10(const std::string& dir, bool allow_download) {
    const fs::path root = fs::path(dir) / "cifar-10-batches-bin";
    const char* kArchiveMd5 = "c32a8d244aa545c5ee22437f9c61a2e7";
    if (!fs::exists(root / "data_batch_1.bin")) {
        if (!allow_download)
            throw DataError("cifar10: dataset not found under " + root.string() +
                            " (download disabled)");
        fs::create_directories(dir);
        const fs::path tgz = fs::path(dir) / "cifar-10-binary.tar.gz";
        if (!fs::exists(tgz))
            http_get_file("www.cs.toronto.edu", "/~kriz/cifar-10-binary.tar.gz", tgz.string());
        const std::string md5 = md5_hex_file(tgz.string());
        if (md5 != kArchiveMd5)
            throw DataError("cifar10: checksum mismatch for " + tgz.string() + ": got " + md5);
        const fs::path tar = fs::path(dir) / "cifar-10-binary.tar";
        gunzip_file(tgz.string(), tar.string());
        untar(tar.string(), dir);
        fs::remove(tar);
    }
    DataBundle b;
    std::vector<fs::path> train_files;
    for (int i = 1; i <= 5; ++i)
        train_files.push_back(root / ("data_batch_" + std::to_string(i) + ".bin"));
    b.train = read_cifar_batches(train_files);
    b.test = read_cifar_batches({root / "test_batch.bin"});
    return b;
}

DataBundle load_image_folder(const std::string& dir, int resolution) {
    if (!fs::is_directory(dir)) throw DataError("folder dataset: not a directory: " + dir);
    std::vector<std::string> class_names;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) class_names.push_back(e.path().filename().string());
    std::sort(class_names.begin(), class_names.end());
    if (class_names.empty()) throw DataError("folder dataset: no class directories in " + dir);
    DataBundle b;
    for (Dataset* ds : {&b.train, &b.test}) {
        ds->num_classes = static_cast<int>(class_names.size());
        ds->height = ds->width = resolution;
    }
    const int64_t map = static_cast<int64_t>(resolution) * resolution;
    for (size_t c = 0; c < class_names.size(); ++c) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(fs::path(dir) / class_names[c]))
            if (e.is_regular_file()) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (files.empty())
            throw DataError("folder dataset: class directory is empty: " + class_names[c]);
        for (size_t i = 0; i < files.size(); ++i) {
            cv::Mat img = cv::imread(files[i].string(), cv::IMREAD_COLOR);
            if (img.empty())
                throw DataError("folder dataset: cannot decode " + files[i].string());
            cv::Mat resized;
            cv::resize(img, resized, cv::Size(resolution, resolution), 0, 0, cv::INTER_AREA);
            // every tenth image becomes held-out test data
            Dataset& ds = (i % 10 == 9) ? b.test : b.train;
            const size_t base = ds.images.size();
            ds.images.resize(base + static_cast<size_t>(3 * map));
            for (int y = 0; y < resolution; ++y)
                for (int x = 0; x < resolution; ++x) {
                    const cv::Vec3b px = resized.at<cv::Vec3b>(y, x);  // BGR
                    ds.images[base + static_cast<size_t>(0 * map + y * resolution + x)] = px[2];
                    ds.images[base + static_cast<size_t>(1 * map + y * resolution + x)] = px[1];
                    ds.images[base + static_cast<size_t>(2 * map + y * resolution + x)] = px[0];
                }
            ds.labels.push_back(static_cast<int>(c));
        }
    }
    if (b.test.size() == 0) b.test = b.train;
    return b;
}

DataBundle ingest_dataset(const DatasetDesc& desc) {
    if (desc.kind == "synthetic") {
        DataBundle b;
        b.train = synthetic_dataset(desc.synthetic_train, desc.classes, desc.resolution, desc.seed);
        b.test = synthetic_dataset(desc.synthetic_test, desc.classes, desc.resolution,
                                   desc.seed + 1);
        return b;
    }
    if (desc.kind == "cifar10") return load_cifar10(desc.path, desc.allow_download);
    if (desc.kind == "folder") return load_image_folder(desc.path, desc.resolution);
    throw ConfigError("unknown dataset kind: " + desc.kind);
}

ValSplit build_val_split(const Dataset& train, int per_class, uint64_t seed) {
    if (per_class <= 0) throw DataError("build_val_split: per_class must be positive");
    std::map<int, std::vector<int64_t>> by_class;
    for (int64_t i = 0; i < train.size(); ++i)
        by_class[train.labels[static_cast<size_t>(i)]].push_back(i);
    Rng rng = make_rng(seed, 21);
    ValSplit split;
    for (auto& [label, idx] : by_class) {
        if (static_cast<int>(idx.size()) < per_class)
            throw DataError("build_val_split: class " + std::to_string(label) + " has only " +
                            std::to_string(idx.size()) + " images, need " +
                            std::to_string(per_class));
        std::shuffle(idx.begin(), idx.end(), rng);
        split.indices.insert(split.indices.end(), idx.begin(), idx.begin() + per_class);
    }
    std::sort(split.indices.begin(), split.indices.end());
    return split;
}

std::vector<int64_t> train_indices_excluding(const Dataset& train, const ValSplit& split) {
    std::vector<int64_t> out;
    out.reserve(static_cast<size_t>(train.size()));
    size_t j = 0;
    for (int64_t i = 0; i < train.size(); ++i) {
        if (j < split.indices.size() && split.indices[j] == i) {
            ++j;
            continue;
        }
        out.push_back(i);
    }
    return out;
}

void make_batch(const Dataset& ds, const int64_t* idx, int count, bool augment, Rng* aug_rng,
                Tensor& images, std::vector<int>& labels) {
    const int H = ds.height, W = ds.width;
    const int64_t map = static_cast<int64_t>(H) * W;
    if (!images.same_shape(Tensor({count, 3, H, W}))) images = Tensor({count, 3, H, W});
    labels.resize(static_cast<size_t>(count));
    constexpr int kPad = 4;
    for (int b = 0; b < count; ++b) {
        const int64_t i = idx[b];
        labels[static_cast<size_t>(b)] = ds.labels[static_cast<size_t>(i)];
        int dy = 0, dx = 0;
        bool flip = false;
        if (augment && aug_rng) {
            dy = static_cast<int>((*aug_rng)() % (2 * kPad + 1)) - kPad;
            dx = static_cast<int>((*aug_rng)() % (2 * kPad + 1)) - kPad;
            flip = ((*aug_rng)() & 1) != 0;
        }
        for (int ch = 0; ch < 3; ++ch) {
            const uint8_t* src = ds.images.data() + (i * 3 + ch) * map;
            float* dst = images.data() + (static_cast<int64_t>(b) * 3 + ch) * map;
            const float m = ds.mean[ch], s = ds.stdev[ch];
            for (int y = 0; y < H; ++y) {
                const int sy = y + dy;
                for (int x = 0; x < W; ++x) {
                    int sx = x + dx;
                    if (flip) sx = W - 1 - sx;
                    float v = 0.0f;
                    if (sy >= 0 && sy < H && sx >= 0 && sx < W)
                        v = static_cast<float>(src[static_cast<int64_t>(sy) * W + sx]) / 255.0f;
                    dst[static_cast<int64_t>(y) * W + x] = (v - m) / s;
                }
            }
        }
    }
}

}  // namespace nasbnn
