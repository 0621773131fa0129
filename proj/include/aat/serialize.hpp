#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "aat/errors.hpp"
#include "aat/nn.hpp"
#include "aat/tensor.hpp"

namespace aat {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace io {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_f64(std::ostream& os, double v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

// Readers track the stream offset so format errors can name it.
inline std::uint32_t read_u32(std::istream& is, std::size_t& offset, const char* what) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) {
        throw FormatError(std::string("truncated ") + what + " at offset " +
                          std::to_string(offset));
    }
    offset += sizeof v;
    return v;
}

inline double read_f64(std::istream& is, std::size_t& offset, const char* what) {
    double v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) {
        throw FormatError(std::string("truncated ") + what + " at offset " +
                          std::to_string(offset));
    }
    offset += sizeof v;
    return v;
}

inline void expect_magic(std::istream& is, std::size_t& offset, const std::string& magic,
                         const char* what) {
    std::string buf(magic.size(), '\0');
    is.read(buf.data(), static_cast<std::streamsize>(magic.size()));
    if (!is || buf != magic) {
        throw FormatError(std::string(what) + ": bad magic at offset " + std::to_string(offset));
    }
    offset += magic.size();
}

} // namespace io

// Flat named-tensor archive: magic, version, count, then for each tensor the
// name, shape and row-major float64 payload.
inline constexpr const char* kParamArchiveMagic = "AATP1";
inline constexpr std::uint32_t kParamArchiveVersion = 1;

inline void write_param_archive(std::ostream& os, const ParamList& params) {
    os.write(kParamArchiveMagic, 5);
    io::write_u32(os, kParamArchiveVersion);
    io::write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& e : params.entries()) {
        io::write_u32(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        io::write_u32(os, static_cast<std::uint32_t>(e.tensor->shape.size()));
        for (int d : e.tensor->shape) io::write_u32(os, static_cast<std::uint32_t>(d));
        for (double v : e.tensor->data) io::write_f64(os, v);
    }
}

inline std::map<std::string, Tensor> read_param_archive(std::istream& is) {
    std::size_t offset = 0;
    io::expect_magic(is, offset, kParamArchiveMagic, "param archive");
    std::uint32_t version = io::read_u32(is, offset, "version");
    if (version != kParamArchiveVersion) {
        throw FormatError("param archive: unsupported version " + std::to_string(version));
    }
    std::uint32_t count = io::read_u32(is, offset, "tensor count");
    std::map<std::string, Tensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = io::read_u32(is, offset, "name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw FormatError("param archive: truncated name at offset " + std::to_string(offset));
        offset += name_len;
        std::uint32_t ndim = io::read_u32(is, offset, "rank");
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = static_cast<int>(io::read_u32(is, offset, "dimension"));
        Tensor t = Tensor::zeros(shape);
        for (double& v : t.data) v = io::read_f64(is, offset, "tensor data");
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

// Copies archived tensors into a live parameter list, by name.
inline void load_params(ParamList& params, const std::map<std::string, Tensor>& archive) {
    for (const auto& e : params.entries()) {
        auto it = archive.find(e.name);
        if (it == archive.end()) {
            throw FormatError("param archive: missing tensor '" + e.name + "'");
        }
        if (it->second.shape != e.tensor->shape) {
            throw FormatError("param archive: tensor '" + e.name + "' has shape " +
                              it->second.shape_str() + ", expected " + e.tensor->shape_str());
        }
        *e.tensor = it->second;
    }
}

} // namespace aat
