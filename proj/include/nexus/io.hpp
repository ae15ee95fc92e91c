#pragma once
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "nexus/errors.hpp"

namespace nexus {

// Write via a sibling temp file plus rename, so readers never observe a
// partially written file and interrupted runs leave no truncated outputs.
inline void write_file_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        contract(f.good(), "write_file_atomic: cannot open temp file");
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        f.flush();
        contract(f.good(), "write_file_atomic: write failed");
    }
    fs::rename(tmp, target);
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    contract(f.good(), ("read_file: cannot open '" + path + "'").c_str());
    std::ostringstream ss;
    ss << f.rdbuf();
    return std::move(ss).str();
}

} // namespace nexus
