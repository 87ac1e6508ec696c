#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "error.hpp"

namespace ood {

struct EmbeddingMeta {
    std::string encoder_name;
    std::string label;
};

/// Row-major matrix of `count` float32 vectors of length `dim`.
/// Immutable once constructed; every entry is finite.
class EmbeddingSet {
public:
    EmbeddingSet() = default;

    EmbeddingSet(std::size_t count, std::size_t dim, std::vector<float> values,
                 EmbeddingMeta meta = {})
        : count_(count), dim_(dim), values_(std::move(values)), meta_(std::move(meta)) {
        if (dim_ == 0) {
            throw Error(ErrorKind::Format, "embedding dim must be positive");
        }
        if (count_ != 0 && dim_ > std::numeric_limits<std::size_t>::max() / count_) {
            throw Error(ErrorKind::Size, "count*dim overflows");
        }
        if (values_.size() != count_ * dim_) {
            throw Error(ErrorKind::Dimension,
                        "embedding payload has " + std::to_string(values_.size()) +
                            " values, expected " + std::to_string(count_ * dim_));
        }
        for (std::size_t i = 0; i < values_.size(); ++i) {
            if (!std::isfinite(values_[i])) {
                throw Error(ErrorKind::Data, "non-finite entry at row " + std::to_string(i / dim_) +
                                                 ", column " + std::to_string(i % dim_));
            }
        }
    }

    static EmbeddingSet from_rows(const std::vector<std::vector<float>>& rows, std::size_t dim,
                                  EmbeddingMeta meta = {}) {
        std::vector<float> flat;
        flat.reserve(rows.size() * dim);
        for (const auto& r : rows) {
            if (r.size() != dim) {
                throw Error(ErrorKind::Dimension, "row length " + std::to_string(r.size()) +
                                                      " does not match dim " + std::to_string(dim));
            }
            flat.insert(flat.end(), r.begin(), r.end());
        }
        return EmbeddingSet(rows.size(), dim, std::move(flat), std::move(meta));
    }

    std::size_t count() const noexcept { return count_; }
    std::size_t dim() const noexcept { return dim_; }
    bool empty() const noexcept { return count_ == 0; }
    const EmbeddingMeta& meta() const noexcept { return meta_; }
    std::span<const float> values() const noexcept { return values_; }

    std::span<const float> row(std::size_t i) const {
        return std::span<const float>(values_).subspan(i * dim_, dim_);
    }

    /// Row widened to double; the engine computes in 64-bit.
    std::vector<double> row_f64(std::size_t i) const {
        auto r = row(i);
        return {r.begin(), r.end()};
    }

    /// New set made of the given rows, in the given order.
    EmbeddingSet select(std::span<const std::size_t> rows) const {
        std::vector<float> flat;
        flat.reserve(rows.size() * dim_);
        for (std::size_t r : rows) {
            auto src = row(r);
            flat.insert(flat.end(), src.begin(), src.end());
        }
        return EmbeddingSet(rows.size(), dim_, std::move(flat), meta_);
    }

    /// Bitwise equality of shape and payload; metadata is not compared.
    friend bool operator==(const EmbeddingSet& a, const EmbeddingSet& b) {
        return a.count_ == b.count_ && a.dim_ == b.dim_ &&
               (a.values_.empty() ||
                std::memcmp(a.values_.data(), b.values_.data(), a.values_.size() * sizeof(float)) ==
                    0);
    }

private:
    std::size_t count_ = 0;
    std::size_t dim_ = 1;
    std::vector<float> values_;
    EmbeddingMeta meta_;
};

namespace emb1 {

inline constexpr std::array<char, 4> kMagic = {'E', 'M', 'B', '1'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 1;
inline constexpr std::size_t kHeaderSize = 16;

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

/// Serializes to the EMB1 byte layout (little-endian, 16-byte header, row-major payload).
inline std::vector<unsigned char> encode(const EmbeddingSet& set) {
    if (set.count() > std::numeric_limits<std::uint32_t>::max() ||
        set.dim() > std::numeric_limits<std::uint32_t>::max()) {
        throw Error(ErrorKind::Size, "embedding shape does not fit in u32 header fields");
    }
    std::vector<unsigned char> out;
    out.reserve(kHeaderSize + set.values().size() * 4);
    out.insert(out.end(), kMagic.begin(), kMagic.end());
    out.push_back(kVersion);
    out.push_back(kDtypeFloat32);
    out.push_back(0);
    out.push_back(0);
    detail::put_u32(out, static_cast<std::uint32_t>(set.count()));
    detail::put_u32(out, static_cast<std::uint32_t>(set.dim()));
    for (float f : set.values()) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
    return out;
}

/// Parses an EMB1 buffer. `context` is prepended to error messages (usually the path).
inline EmbeddingSet decode(std::span<const unsigned char> bytes, const std::string& context = "",
                           EmbeddingMeta meta = {}) {
    const std::string where = context.empty() ? std::string("EMB1") : context;
    if (bytes.size() < kHeaderSize) {
        if (bytes.size() >= 4 && !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
            throw Error(ErrorKind::Format, where + ": bad magic");
        }
        throw Error(ErrorKind::Corruption, where + ": truncated header (" +
                                               std::to_string(bytes.size()) + " bytes)");
    }
    if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
        throw Error(ErrorKind::Format, where + ": bad magic");
    }
    if (bytes[4] != kVersion) {
        throw Error(ErrorKind::Format,
                    where + ": unsupported version " + std::to_string(int(bytes[4])));
    }
    if (bytes[5] != kDtypeFloat32) {
        throw Error(ErrorKind::Format,
                    where + ": unsupported dtype code " + std::to_string(int(bytes[5])));
    }
    if (bytes[6] != 0 || bytes[7] != 0) {
        throw Error(ErrorKind::Format, where + ": reserved header bytes are not zero");
    }
    const std::uint64_t count = detail::get_u32(bytes.data() + 8);
    const std::uint64_t dim = detail::get_u32(bytes.data() + 12);
    if (dim == 0) {
        throw Error(ErrorKind::Format, where + ": dim must be positive");
    }
    std::uint64_t n_values = 0;
    std::uint64_t n_bytes = 0;
    if (__builtin_mul_overflow(count, dim, &n_values) ||
        __builtin_mul_overflow(n_values, std::uint64_t{4}, &n_bytes) ||
        n_values > std::numeric_limits<std::size_t>::max() / sizeof(float)) {
        throw Error(ErrorKind::Size, where + ": count*dim overflows");
    }
    const std::uint64_t payload = bytes.size() - kHeaderSize;
    if (payload != n_bytes) {
        throw Error(ErrorKind::Corruption, where + ": payload is " + std::to_string(payload) +
                                               " bytes, header declares " +
                                               std::to_string(n_bytes));
    }
    std::vector<float> values(static_cast<std::size_t>(n_values));
    const unsigned char* p = bytes.data() + kHeaderSize;
    for (std::size_t i = 0; i < values.size(); ++i, p += 4) {
        values[i] = std::bit_cast<float>(detail::get_u32(p));
        if (!std::isfinite(values[i])) {
            throw Error(ErrorKind::Data, where + ": non-finite value at row " +
                                             std::to_string(i / dim) + ", column " +
                                             std::to_string(i % dim));
        }
    }
    return EmbeddingSet(static_cast<std::size_t>(count), static_cast<std::size_t>(dim),
                        std::move(values), std::move(meta));
}

}  // namespace emb1

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::Io, path.string() + ": cannot open for reading");
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw Error(ErrorKind::Io, path.string() + ": read failed");
    }
    return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path,
                             std::span<const unsigned char> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::Io, path.string() + ": cannot open for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
        throw Error(ErrorKind::Io, path.string() + ": write failed");
    }
}

/// Loads an EMB1 file. The label is taken from the file stem; EMB1 carries no metadata.
inline EmbeddingSet read_embedding_file(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return emb1::decode(bytes, path.string(), EmbeddingMeta{"", path.stem().string()});
}

inline void write_embedding_file(const EmbeddingSet& set, const std::filesystem::path& path) {
    write_file_bytes(path, emb1::encode(set));
}

// ---------------------------------------------------------------------------
// Dataset manifest

enum class Role { Id, Ood };

struct ManifestEntry {
    std::string path;
    Role role = Role::Id;
    std::string ood_type;
    std::string encoder;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct PromptFiles {
    std::string normal;
    std::string anomalous;

    friend bool operator==(const PromptFiles&, const PromptFiles&) = default;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    PromptFiles prompt_files;
    /// Directory relative entry paths are resolved against (the manifest's own directory).
    std::filesystem::path base_dir;

    std::filesystem::path resolve(const std::string& p) const {
        std::filesystem::path path(p);
        return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    }
};

inline void validate(const DatasetManifest& m) {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        const auto& e = m.entries[i];
        const std::string where = "manifest entry " + std::to_string(i);
        if (e.path.empty()) {
            throw Error(ErrorKind::Validation, where + ": empty path");
        }
        if (e.role == Role::Ood && e.ood_type.empty()) {
            throw Error(ErrorKind::Validation, where + ": ood entry requires a nonempty ood_type");
        }
        if (e.role == Role::Id && !e.ood_type.empty()) {
            throw Error(ErrorKind::Validation, where + ": id entry must have an empty ood_type");
        }
        if (!seen.insert(e.path).second) {
            throw Error(ErrorKind::Validation, where + ": duplicate path '" + e.path + "'");
        }
    }
}

inline DatasetManifest parse_manifest(const std::string& text,
                                      const std::filesystem::path& base_dir = {}) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::Format, std::string("manifest is not valid JSON: ") + e.what());
    }
    DatasetManifest m;
    m.base_dir = base_dir;
    try {
        if (!doc.is_object() || !doc.contains("entries") || !doc.at("entries").is_array()) {
            throw Error(ErrorKind::Validation, "manifest requires an 'entries' array");
        }
        for (const auto& j : doc.at("entries")) {
            ManifestEntry e;
            e.path = j.at("path").get<std::string>();
            const auto role = j.at("role").get<std::string>();
            if (role == "id") {
                e.role = Role::Id;
            } else if (role == "ood") {
                e.role = Role::Ood;
            } else {
                throw Error(ErrorKind::Validation, "unknown role '" + role + "'");
            }
            e.ood_type = j.value("ood_type", std::string());
            e.encoder = j.value("encoder", std::string());
            m.entries.push_back(std::move(e));
        }
        if (doc.contains("prompt_files")) {
            const auto& pf = doc.at("prompt_files");
            m.prompt_files.normal = pf.value("normal", std::string());
            m.prompt_files.anomalous = pf.value("anomalous", std::string());
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Validation, std::string("malformed manifest: ") + e.what());
    }
    validate(m);
    return m;
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return parse_manifest(std::string(bytes.begin(), bytes.end()), path.parent_path());
    } catch (const Error& e) {
        throw e.with_context(path.string());
    }
}

inline std::string render_manifest(const DatasetManifest& m) {
    nlohmann::ordered_json doc;
    doc["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : m.entries) {
        nlohmann::ordered_json j;
        j["path"] = e.path;
        j["role"] = e.role == Role::Id ? "id" : "ood";
        j["ood_type"] = e.ood_type;
        j["encoder"] = e.encoder;
        doc["entries"].push_back(std::move(j));
    }
    doc["prompt_files"] = {{"normal", m.prompt_files.normal},
                           {"anomalous", m.prompt_files.anomalous}};
    return doc.dump(2) + "\n";
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    validate(m);
    const auto text = render_manifest(m);
    write_file_bytes(path, std::span(reinterpret_cast<const unsigned char*>(text.data()),
                                     text.size()));
}

}  // namespace ood
