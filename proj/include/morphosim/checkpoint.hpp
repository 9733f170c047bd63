#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "morphosim/error.hpp"
#include "morphosim/params.hpp"

namespace morphosim {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_i64(std::ostream& os, int64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_str(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
inline int64_t read_i64(std::istream& is) {
    int64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
inline std::string read_str(std::istream& is) {
    const uint32_t n = read_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    return s;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'M', 'S', 'I', 'M', 'C', 'K', 'P', '1'};

// Named-tensor container with integer metadata. Tensors are written sorted by
// name with raw little-endian values, so identical stores serialize to
// identical bytes.
template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store,
                     const std::map<std::string, int64_t>& meta) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, 8);
    detail::write_u32(os, static_cast<uint32_t>(sizeof(T)));
    detail::write_u32(os, static_cast<uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
        detail::write_str(os, k);
        detail::write_i64(os, v);
    }
    std::vector<const Param<T>*> sorted;
    for (const auto& p : store.all()) sorted.push_back(&p);
    std::sort(sorted.begin(), sorted.end(),
              [](const Param<T>* a, const Param<T>* b) { return a->name < b->name; });
    detail::write_u32(os, static_cast<uint32_t>(sorted.size()));
    for (const Param<T>* p : sorted) {
        detail::write_str(os, p->name);
        detail::write_u32(os, static_cast<uint32_t>(p->value.shape.size()));
        for (int64_t d : p->value.shape) detail::write_i64(os, d);
        os.write(reinterpret_cast<const char*>(p->value.data.data()),
                 static_cast<std::streamsize>(p->value.data.size() * sizeof(T)));
    }
    if (!os) throw IoError("checkpoint write failed: " + path);
}

template <typename T>
struct Checkpoint {
    std::map<std::string, int64_t> meta;
    ParamStore<T> params;
};

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || !std::equal(magic, magic + 8, kCheckpointMagic))
        throw IoError("not a checkpoint file: " + path);
    const uint32_t width = detail::read_u32(is);
    if (width != sizeof(T))
        throw IoError("checkpoint scalar width " + std::to_string(width) + " does not match");
    Checkpoint<T> out;
    const uint32_t n_meta = detail::read_u32(is);
    for (uint32_t i = 0; i < n_meta; ++i) {
        std::string k = detail::read_str(is);
        out.meta[k] = detail::read_i64(is);
    }
    const uint32_t n_tensors = detail::read_u32(is);
    for (uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = detail::read_str(is);
        const uint32_t rank = detail::read_u32(is);
        std::vector<int64_t> shape(rank);
        for (uint32_t d = 0; d < rank; ++d) shape[d] = detail::read_i64(is);
        Tensor<T> t(shape);
        is.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(T)));
        out.params.add(name, std::move(t));
    }
    if (!is) throw IoError("truncated checkpoint: " + path);
    return out;
}

}  // namespace morphosim
