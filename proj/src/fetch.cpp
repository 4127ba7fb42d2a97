#include "fetch.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include <openssl/evp.h>
#include <zlib.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "nasbnn/errors.hpp"

namespace nasbnn {

namespace {

std::string digest_hex(const EVP_MD* md, std::istream& is) {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw DataError("digest: EVP_MD_CTX_new failed");
    EVP_DigestInit_ex(ctx, md, nullptr);
    std::vector<char> buf(1 << 16);
    while (is) {
        is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const auto got = is.gcount();
        if (got > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<size_t>(got));
    }
    unsigned char out[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, out, &len);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string s;
    for (unsigned int i = 0; i < len; ++i) {
        s += hex[out[i] >> 4];
        s += hex[out[i] & 0xf];
    }
    return s;
}

}  // namespace

std::string md5_hex_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("md5: cannot open " + path);
    return digest_hex(EVP_md5(), is);
}

std::string sha256_hex(const std::string& bytes) {
    std::istringstream is(bytes);
    return digest_hex(EVP_sha256(), is);
}

void gunzip_file(const std::string& src, const std::string& dst) {
    gzFile in = gzopen(src.c_str(), "rb");
    if (!in) throw DataError("gunzip: cannot open " + src);
    std::ofstream os(dst, std::ios::binary);
    if (!os) {
        gzclose(in);
        throw DataError("gunzip: cannot write " + dst);
    }
    std::vector<char> buf(1 << 16);
    int got;
    while ((got = gzread(in, buf.data(), static_cast<unsigned>(buf.size()))) > 0)
        os.write(buf.data(), got);
    const bool bad = got < 0;
    gzclose(in);
    if (bad) throw DataError("gunzip: corrupt stream in " + src);
}

void untar(const std::string& tar_path, const std::string& out_dir) {
    std::ifstream is(tar_path, std::ios::binary);
    if (!is) throw DataError("untar: cannot open " + tar_path);
    char header[512];
    while (is.read(header, 512)) {
        bool empty = true;
        for (int i = 0; i < 512; ++i)
            if (header[i]) { empty = false; break; }
        if (empty) break;
        char name[101] = {0};
        std::memcpy(name, header, 100);
        char size_str[13] = {0};
        std::memcpy(size_str, header + 124, 12);
        const long long size = std::strtoll(size_str, nullptr, 8);
        const char type = header[156];
        const std::filesystem::path out = std::filesystem::path(out_dir) / name;
        if (out.lexically_normal().string().find("..") == 0)
            throw DataError("untar: path escapes destination: " + std::string(name));
        if (type == '5') {
            std::filesystem::create_directories(out);
        } else if (type == '0' || type == '\0') {
            std::filesystem::create_directories(out.parent_path());
            std::ofstream os(out, std::ios::binary);
            if (!os) throw DataError("untar: cannot write " + out.string());
            long long left = size;
            std::vector<char> buf(1 << 16);
            while (left > 0) {
                const auto take = static_cast<std::streamsize>(
                    std::min<long long>(left, static_cast<long long>(buf.size())));
                if (!is.read(buf.data(), take)) throw DataError("untar: truncated archive");
                os.write(buf.data(), take);
                left -= take;
            }
        } else {
            is.seekg(((size + 511) / 512) * 512, std::ios::cur);
            continue;
        }
        const long long pad = (512 - size % 512) % 512;
        if (pad) is.seekg(pad, std::ios::cur);
    }
}

void http_get_file(const std::string& host, const std::string& target, const std::string& dst) {
    httplib::SSLClient cli(host);
    cli.set_follow_location(true);
    cli.set_connection_timeout(30);
    cli.set_read_timeout(120);
    std::ofstream os(dst, std::ios::binary);
    if (!os) throw DataError("download: cannot write " + dst);
    auto res = cli.Get(target, [&](const char* data, size_t len) {
        os.write(data, static_cast<std::streamsize>(len));
        return true;
    });
    if (!res || res->status != 200)
        throw DataError("download failed: https://" + host + target +
                        (res ? " (status " + std::to_string(res->status) + ")" : " (no response)"));
}

}  // namespace nasbnn
