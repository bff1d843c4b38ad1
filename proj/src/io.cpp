#include "mscred/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mscred/errors.hpp"

namespace fs = std::filesystem;

namespace mscred::io {

void ensure_parent_dir(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

void atomic_write_bytes(const std::string& path, const void* data, std::size_t size) {
    ensure_parent_dir(path);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp);
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
        if (!out) throw DataError("short write to " + tmp);
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw DataError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

void atomic_write(const std::string& path, const std::string& content) {
    atomic_write_bytes(path, content.data(), content.size());
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace mscred::io
