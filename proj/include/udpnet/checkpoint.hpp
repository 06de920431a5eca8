#pragma once

// Checkpoint container: a JSON header followed by named raw arrays.
//
//   magic "UDPN" | u32 version | u32 json_len | json bytes
//   u64 array_count
//   per array: u32 name_len | name | u32 dtype | u32 ndim | u64 dims[] | data
//
// dtype 0 = float32, 1 = float64. The writer always emits float64; the
// reader accepts both. All integers little-endian. Saving the same state
// twice produces identical bytes.

#include <cstdint>
#include <cstring>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "udpnet/model.hpp"
#include "udpnet/util.hpp"

namespace udpnet {

struct ArrayRecord {
    std::string name;
    std::vector<uint64_t> dims;
    std::vector<double> data;

    uint64_t numel() const {
        uint64_t n = 1;
        for (uint64_t d : dims) n *= d;
        return n;
    }
};

struct CheckpointData {
    nlohmann::json header; // run config plus kind/step/latent range etc.
    std::vector<ArrayRecord> arrays;

    const ArrayRecord& array(const std::string& name) const {
        for (const auto& a : arrays)
            if (a.name == name) return a;
        throw std::runtime_error("checkpoint: missing array " + name);
    }
    bool has(const std::string& name) const {
        for (const auto& a : arrays)
            if (a.name == name) return true;
        return false;
    }
};

namespace detail {

inline void ckpt_u32(std::string& out, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.append(b, 4);
}

inline void ckpt_u64(std::string& out, uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.append(b, 8);
}

struct ByteReader {
    const std::string& buf;
    size_t pos = 0;

    explicit ByteReader(const std::string& b) : buf(b) {}

    void need(size_t n) const {
        if (pos + n > buf.size())
            throw std::runtime_error("checkpoint: truncated file");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

} // namespace detail

inline void save_checkpoint(const std::string& path, const CheckpointData& ckpt) {
    std::string out;
    out.append("UDPN", 4);
    detail::ckpt_u32(out, 1u);
    const std::string hdr = ckpt.header.dump();
    detail::ckpt_u32(out, static_cast<uint32_t>(hdr.size()));
    out.append(hdr);
    detail::ckpt_u64(out, ckpt.arrays.size());
    for (const auto& a : ckpt.arrays) {
        if (a.numel() != a.data.size())
            throw std::runtime_error("checkpoint: dims/data mismatch for " + a.name);
        detail::ckpt_u32(out, static_cast<uint32_t>(a.name.size()));
        out.append(a.name);
        detail::ckpt_u32(out, 1u); // float64
        detail::ckpt_u32(out, static_cast<uint32_t>(a.dims.size()));
        for (uint64_t d : a.dims) detail::ckpt_u64(out, d);
        const size_t off = out.size();
        out.resize(off + a.data.size() * sizeof(double));
        std::memcpy(out.data() + off, a.data.data(), a.data.size() * sizeof(double));
    }
    atomic_write_file(path, out);
}

inline CheckpointData load_checkpoint(const std::string& path) {
    const std::string buf = read_file(path);
    detail::ByteReader r(buf);
    if (r.bytes(4) != "UDPN")
        throw std::runtime_error("checkpoint: " + path + ": bad magic");
    const uint32_t version = r.u32();
    if (version != 1)
        throw std::runtime_error("checkpoint: " + path + ": unsupported version " +
                                 std::to_string(version));
    CheckpointData ckpt;
    const uint32_t hdr_len = r.u32();
    try {
        ckpt.header = nlohmann::json::parse(r.bytes(hdr_len));
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("checkpoint: " + path + ": bad header: " + e.what());
    }
    const uint64_t count = r.u64();
    ckpt.arrays.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        ArrayRecord a;
        a.name = r.bytes(r.u32());
        const uint32_t dtype = r.u32();
        if (dtype > 1)
            throw std::runtime_error("checkpoint: unknown dtype for " + a.name);
        const uint32_t ndim = r.u32();
        a.dims.resize(ndim);
        for (uint32_t d = 0; d < ndim; ++d) a.dims[d] = r.u64();
        const uint64_t n = a.numel();
        a.data.resize(n);
        if (dtype == 1) {
            const std::string raw = r.bytes(n * sizeof(double));
            std::memcpy(a.data.data(), raw.data(), raw.size());
        } else {
            const std::string raw = r.bytes(n * sizeof(float));
            for (uint64_t k = 0; k < n; ++k) {
                float f;
                std::memcpy(&f, raw.data() + k * sizeof(float), sizeof(float));
                a.data[k] = static_cast<double>(f);
            }
        }
        ckpt.arrays.push_back(std::move(a));
    }
    return ckpt;
}

// Parameter packing. Array names are the parameter names; dims mirror shapes.

inline std::vector<ArrayRecord> arrays_from_params(const ParamList& params,
                                                   const std::string& prefix = "") {
    std::vector<ArrayRecord> out;
    out.reserve(params.size());
    for (const auto& [name, p] : params) {
        ArrayRecord a;
        a.name = prefix + name;
        for (int d : p->shape) a.dims.push_back(static_cast<uint64_t>(d));
        a.data = p->data;
        out.push_back(std::move(a));
    }
    return out;
}

inline void load_params_from(const CheckpointData& ckpt, ParamList& params,
                             const std::string& prefix = "") {
    for (auto& [name, p] : params) {
        const ArrayRecord& a = ckpt.array(prefix + name);
        if (a.data.size() != p->data.size())
            throw std::runtime_error("checkpoint: size mismatch for " + a.name +
                                     " (file " + std::to_string(a.data.size()) +
                                     ", model " + std::to_string(p->data.size()) + ")");
        p->data = a.data;
    }
}

// Structural header comparison for resuming: the sections that determine
// array shapes must match exactly. Differences elsewhere (step counts,
// learning rates) are allowed.
inline void require_matching_header(const nlohmann::json& stored,
                                    const nlohmann::json& current) {
    for (const char* key : {"model", "schedule", "mel", "data"}) {
        const nlohmann::json a = stored.contains(key) ? stored.at(key) : nlohmann::json();
        const nlohmann::json b = current.contains(key) ? current.at(key) : nlohmann::json();
        if (a != b)
            throw std::runtime_error(std::string("checkpoint: stored \"") + key +
                                     "\" section does not match the current config");
    }
}

} // namespace udpnet
