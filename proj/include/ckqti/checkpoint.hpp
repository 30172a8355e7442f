// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ckqti/binary_io.hpp"
#include "ckqti/tensor.hpp"
#include "json.hpp"

namespace ckqti {

/// Layout: "CKQTICKP", u32 version, u64 manifest length, JSON manifest, then
/// each entry's float32 values in manifest order (little-endian).
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    struct Entry {
        std::string name;
        Shape shape;
        std::vector<float> values;
    };

    nlohmann::json config = nlohmann::json::object();
    std::uint64_t config_hash = 0;
    bool frozen = false;
    std::vector<Entry> entries;

    [[nodiscard]] const Entry* find(const std::string& name) const
    {
        for (const auto& e : entries) {
            if (e.name == name) {
                return &e;
            }
        }
        return nullptr;
    }

    template <typename T>
    void add(const std::string& name, const Tensor<T>& t)
    {
        Entry e{name, t.shape(), {}};
        e.values.reserve(t.numel());
        for (T v : t.values()) {
            e.values.push_back(static_cast<float>(v));
        }
        entries.push_back(std::move(e));
    }

    /// Copies a stored entry into `t` in place; shapes must agree.
    template <typename T>
    void restore(const std::string& name, Tensor<T>& t) const
    {
        const Entry* e = find(name);
        if (!e) {
            throw FormatError("checkpoint: missing entry '" + name + "'");
        }
        if (e->shape != t.shape()) {
            throw FormatError("checkpoint: entry '" + name + "' has shape " + shape_str(e->shape) + ", expected " +
                              shape_str(t.shape()));
        }
        auto dst = t.mutable_values();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] = static_cast<T>(e->values[i]);
        }
    }

    void write(std::ostream& out) const
    {
        nlohmann::json manifest;
        manifest["format_version"] = kVersion;
        manifest["config"] = config;
        manifest["config_hash"] = config_hash;
        manifest["frozen"] = frozen;
        manifest["entries"] = nlohmann::json::array();
        std::uint64_t offset = 0;
        for (const auto& e : entries) {
            manifest["entries"].push_back({{"name", e.name}, {"shape", e.shape}, {"offset", offset},
                                           {"numel", e.values.size()}});
            offset += e.values.size();
        }
        const std::string text = manifest.dump();
        out.write("CKQTICKP", 8);
        io::put_le(out, kVersion);
        io::put_le(out, static_cast<std::uint64_t>(text.size()));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& e : entries) {
            for (float v : e.values) {
                io::put_f32(out, v);
            }
        }
        if (!out) {
            throw Error("checkpoint: write failed");
        }
    }

    static Checkpoint read(std::istream& in)
    {
        io::expect_magic(in, "CKQTICKP", "checkpoint");
        const auto version = io::get_le<std::uint32_t>(in, "checkpoint version");
        if (version != kVersion) {
            throw FormatError("checkpoint: unsupported version " + std::to_string(version));
        }
        const auto len = io::get_le<std::uint64_t>(in, "checkpoint manifest length");
        std::string text(len, '\0');
        if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
            throw FormatError("checkpoint: truncated manifest");
        }
        Checkpoint ckpt;
        try {
            auto manifest = nlohmann::json::parse(text);
            ckpt.config = manifest.at("config");
            ckpt.config_hash = manifest.at("config_hash").get<std::uint64_t>();
            ckpt.frozen = manifest.at("frozen").get<bool>();
            for (const auto& e : manifest.at("entries")) {
                Entry entry{e.at("name").get<std::string>(), e.at("shape").get<Shape>(), {}};
                entry.values.resize(e.at("numel").get<std::size_t>());
                if (entry.values.size() != shape_numel(entry.shape)) {
                    throw FormatError("checkpoint: entry '" + entry.name + "' size does not match its shape");
                }
                ckpt.entries.push_back(std::move(entry));
            }
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("checkpoint: bad manifest: ") + e.what());
        }
        for (auto& e : ckpt.entries) {
            for (auto& v : e.values) {
                v = io::get_f32(in, "checkpoint payload");
            }
        }
        return ckpt;
    }

    void save(const std::filesystem::path& path) const
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot open '" + path.string() + "' for writing");
        }
        write(out);
    }

    static Checkpoint load(const std::filesystem::path& path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw Error("cannot open '" + path.string() + "' for reading");
        }
        return read(in);
    }
};

}  // namespace ckqti
