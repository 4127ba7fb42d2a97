#pragma once

#include <string>

namespace nasbnn {

// Helpers behind dataset auto-download: hashing, .tar.gz extraction and a
// minimal HTTPS GET. All throw DataError on failure.
std::string md5_hex_file(const std::string& path);
std::string sha256_hex(const std::string& bytes);
void gunzip_file(const std::string& src, const std::string& dst);
void untar(const std::string& tar_path, const std::string& out_dir);
void http_get_file(const std::string& host, const std::string& target, const std::string& dst);

}  // namespace nasbnn
