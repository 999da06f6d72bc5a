#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "slpt/diffcore/params.hpp"

// "SLPT" binary containers. Raw tensor file:
//   magic "SLPT" | u32 version | u64 rank | u64 dims[rank] | f32 data
// Checkpoint file:
//   magic "SLPT" | u32 version | { u64 name_len | name | u64 rank | u64 dims | f32 data }*
// All integers and floats little-endian. Optimizer moments are stored as extra
// entries named "<param>/m" and "<param>/v".
namespace slpt::io {

static_assert(std::endian::native == std::endian::little, "SLPT files are written in host order on little-endian hosts");

inline constexpr std::array<char, 4> kMagic{'S', 'L', 'P', 'T'};
inline constexpr std::uint32_t kFormatVersion = 1;

namespace detail {

template <class V>
void put(std::ostream& os, V v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::istream& is, const std::string& path)
{
    V v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(V))) throw IoError("truncated SLPT file: " + path);
    return v;
}

inline void write_header(std::ostream& os)
{
    os.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(os, kFormatVersion);
}

inline void read_header(std::istream& is, const std::string& path)
{
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kMagic) throw IoError("not an SLPT file: " + path);
    const auto version = get<std::uint32_t>(is, path);
    if (version != kFormatVersion) throw IoError("unsupported SLPT version " + std::to_string(version) + ": " + path);
}

template <class T>
void write_body(std::ostream& os, const Tensor<T>& t)
{
    put<std::uint64_t>(os, t.rank());
    for (auto d : t.shape()) put<std::uint64_t>(os, d);
    for (std::size_t i = 0; i < t.size(); ++i) put<float>(os, static_cast<float>(t[i]));
}

inline Tensor<float> read_body(std::istream& is, const std::string& path)
{
    const auto rank = get<std::uint64_t>(is, path);
    if (rank > 8) throw IoError("implausible tensor rank in " + path);
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(is, path);
    Tensor<float> t(shape);
    if (t.size() && !is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float))))
        throw IoError("truncated tensor data in " + path);
    return t;
}

inline std::ofstream open_out(const std::filesystem::path& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    return os;
}

inline std::ifstream open_in(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path.string());
    return is;
}

} // namespace detail

template <class T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t)
{
    auto os = detail::open_out(path);
    detail::write_header(os);
    detail::write_body(os, t);
    if (!os) throw IoError("write failed: " + path.string());
}

inline Tensor<float> read_tensor(const std::filesystem::path& path)
{
    auto is = detail::open_in(path);
    detail::read_header(is, path.string());
    return detail::read_body(is, path.string());
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& store, bool with_optimizer)
{
    auto os = detail::open_out(path);
    detail::write_header(os);
    auto entry = [&](const std::string& name, const Tensor<T>& t) {
        detail::put<std::uint64_t>(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_body(os, t);
    };
    for (const auto& [name, e] : store.entries()) entry(name, e.value);
    if (with_optimizer) {
        for (const auto& [name, e] : store.entries()) {
            entry(name + "/m", e.m);
            entry(name + "/v", e.v);
        }
    }
    if (!os) throw IoError("checkpoint write failed: " + path.string());
}

inline std::map<std::string, Tensor<float>> read_checkpoint(const std::filesystem::path& path)
{
    auto is = detail::open_in(path);
    detail::read_header(is, path.string());
    std::map<std::string, Tensor<float>> out;
    while (is.peek() != std::char_traits<char>::eof()) {
        const auto len = detail::get<std::uint64_t>(is, path.string());
        if (len > 4096) throw IoError("implausible parameter name length in " + path.string());
        std::string name(len, '\0');
        if (!is.read(name.data(), static_cast<std::streamsize>(len))) throw IoError("truncated name in " + path.string());
        out.emplace(std::move(name), detail::read_body(is, path.string()));
    }
    return out;
}

// Overwrites every parameter of `store` from the file; shapes must agree and
// every parameter must be present. Moments are restored when available.
template <class T>
void load_checkpoint(const std::filesystem::path& path, ParamStore<T>& store)
{
    auto entries = read_checkpoint(path);
    for (auto& [name, e] : store.entries()) {
        auto it = entries.find(name);
        if (it == entries.end()) throw IoError("checkpoint " + path.string() + " lacks parameter '" + name + "'");
        if (it->second.shape() != e.value.shape())
            throw IoError("checkpoint shape mismatch for '" + name + "': " + shape_str(it->second.shape()) + " vs " +
                          shape_str(e.value.shape()));
        e.value = it->second.template cast<T>();
        if (auto m = entries.find(name + "/m"); m != entries.end()) e.m = m->second.template cast<T>();
        if (auto v = entries.find(name + "/v"); v != entries.end()) e.v = v->second.template cast<T>();
    }
}

} // namespace slpt::io
