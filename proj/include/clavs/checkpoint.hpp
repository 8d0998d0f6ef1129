#pragma once

// Versioned binary archive of named 64-bit tensor tables plus a config echo.
// Layout (all integers and doubles little-endian, verified by a byte-order
// marker on load):
//   magic "CLAVSCP1" | u32 version | u64 order marker
//   u64 config_len | config bytes (JSON echo)
//   u64 n_sections | per section:
//     u64 name_len | name | u64 n_tensors | per tensor:
//       u64 name_len | name | u32 ndim | u64 dims[ndim] | f64 data[numel]

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "clavs/tensor.hpp"

namespace clavs {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace ckpt {

using TensorTable = std::map<std::string, std::pair<Shape, std::vector<double>>>;

struct Archive {
    std::string config_json;
    std::map<std::string, TensorTable> sections;
};

constexpr char kMagic[8] = {'C', 'L', 'A', 'V', 'S', 'C', 'P', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kOrderMarker = 0x0102030405060708ull;

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("checkpoint: truncated stream");
    return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_pod<std::uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
    auto n = read_pod<std::uint64_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw IoError("checkpoint: truncated string");
    return s;
}

}  // namespace detail

inline void save(const Archive& a, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, sizeof(kMagic));
    detail::write_pod<std::uint32_t>(os, kVersion);
    detail::write_pod<std::uint64_t>(os, kOrderMarker);
    detail::write_string(os, a.config_json);
    detail::write_pod<std::uint64_t>(os, a.sections.size());
    for (const auto& [sname, table] : a.sections) {
        detail::write_string(os, sname);
        detail::write_pod<std::uint64_t>(os, table.size());
        for (const auto& [tname, entry] : table) {
            detail::write_string(os, tname);
            detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(entry.first.size()));
            for (std::size_t d : entry.first) detail::write_pod<std::uint64_t>(os, d);
            os.write(reinterpret_cast<const char*>(entry.second.data()),
                     static_cast<std::streamsize>(entry.second.size() * sizeof(double)));
        }
    }
    if (!os) throw IoError("checkpoint: write to " + path + " failed");
}

inline Archive load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("checkpoint: " + path + " is not a clavs checkpoint");
    auto version = detail::read_pod<std::uint32_t>(is);
    if (version != kVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version));
    if (detail::read_pod<std::uint64_t>(is) != kOrderMarker)
        throw IoError("checkpoint: byte-order marker mismatch");
    Archive a;
    a.config_json = detail::read_string(is);
    auto n_sections = detail::read_pod<std::uint64_t>(is);
    for (std::uint64_t s = 0; s < n_sections; ++s) {
        std::string sname = detail::read_string(is);
        auto n_tensors = detail::read_pod<std::uint64_t>(is);
        TensorTable table;
        for (std::uint64_t t = 0; t < n_tensors; ++t) {
            std::string tname = detail::read_string(is);
            auto ndim = detail::read_pod<std::uint32_t>(is);
            Shape shape(ndim);
            for (auto& d : shape) d = detail::read_pod<std::uint64_t>(is);
            std::vector<double> data(shape_numel(shape));
            is.read(reinterpret_cast<char*>(data.data()),
                    static_cast<std::streamsize>(data.size() * sizeof(double)));
            if (!is) throw IoError("checkpoint: truncated tensor " + tname);
            table.emplace(std::move(tname), std::make_pair(std::move(shape), std::move(data)));
        }
        a.sections.emplace(std::move(sname), std::move(table));
    }
    return a;
}

// scalar convenience entries
inline void put_scalar(TensorTable& t, const std::string& name, double v) {
    t[name] = {Shape{}, {v}};
}

inline double get_scalar(const TensorTable& t, const std::string& name) {
    auto it = t.find(name);
    if (it == t.end()) throw IoError("checkpoint: missing scalar " + name);
    return it->second.second.at(0);
}

}  // namespace ckpt
}  // namespace clavs
