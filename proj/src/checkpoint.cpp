#include "nasbnn/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "nasbnn/errors.hpp"

namespace nasbnn {

namespace {
constexpr char kMagic[4] = {'N', 'B', 'N', 'C'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("checkpoint: unexpected end of file");
    return v;
}
}  // namespace

void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const std::map<std::string, Tensor*>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot open for writing: " + path);
    os.write(kMagic, 4);
    write_pod(os, kVersion);
    const std::string m = meta.dump();
    write_pod(os, static_cast<uint64_t>(m.size()));
    os.write(m.data(), static_cast<std::streamsize>(m.size()));
    write_pod(os, static_cast<uint64_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        write_pod(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(os, static_cast<uint32_t>(t->ndim()));
        for (int i = 0; i < t->ndim(); ++i) write_pod(os, t->dim(i));
        os.write(reinterpret_cast<const char*>(t->data()),
                 static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(t->numel())));
    }
    if (!os) throw DataError("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    const auto version = read_pod<uint32_t>(is);
    if (version != kVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    const auto meta_len = read_pod<uint64_t>(is);
    std::string m(meta_len, '\0');
    is.read(m.data(), static_cast<std::streamsize>(meta_len));
    if (!is) throw DataError("checkpoint: truncated metadata");
    Checkpoint ck;
    try {
        ck.meta = nlohmann::json::parse(m);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: bad metadata JSON: ") + e.what());
    }
    const auto count = read_pod<uint64_t>(is);
    for (uint64_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto ndim = read_pod<uint32_t>(is);
        std::vector<int64_t> dims;
        for (uint32_t d = 0; d < ndim; ++d) dims.push_back(read_pod<int64_t>(is));
        Tensor t(dims);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(t.numel())));
        if (!is) throw DataError("checkpoint: truncated tensor " + name);
        ck.tensors.emplace(std::move(name), std::move(t));
    }
    return ck;
}

}  // namespace nasbnn
