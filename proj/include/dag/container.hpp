#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dag/tensor.hpp"

namespace dag {

// Tensor container: manifest.json + data.bin. The blob is little-endian f32,
// row-major, concatenated in manifest order; offsets are non-overlapping and
// byte_length = 4 * numel. Round-trips are bit-exact.
struct TensorContainer {
    std::vector<std::pair<std::string, Tensor>> tensors;

    void add(const std::string& name, const Tensor& t) {
        DAG_CHECK(find(name) == nullptr, contract, "container: duplicate tensor name " + name);
        tensors.emplace_back(name, t);
    }

    const Tensor* find(const std::string& name) const {
        for (auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }

    Tensor get(const std::string& name) const {
        const Tensor* t = find(name);
        DAG_CHECK(t != nullptr, io, "container: missing tensor " + name);
        return *t;
    }

    void write(const std::string& dir) const {
        namespace fs = std::filesystem;
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) fail(ErrorKind::io, "cannot create directory " + dir + ": " + ec.message());

        nlohmann::ordered_json manifest;
        manifest["format_version"] = 1;
        manifest["tensors"] = nlohmann::ordered_json::array();
        uint64_t offset = 0;
        for (auto& [name, t] : tensors) {
            uint64_t bytes = static_cast<uint64_t>(t.numel()) * 4;
            nlohmann::ordered_json e;
            e["name"] = name;
            e["dtype"] = "f32";
            e["shape"] = t.shape();
            e["byte_offset"] = offset;
            e["byte_length"] = bytes;
            manifest["tensors"].push_back(e);
            offset += bytes;
        }
        {
            std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::binary);
            if (!mf) fail(ErrorKind::io, "cannot write " + dir + "/manifest.json");
            mf << manifest.dump(2) << "\n";
        }
        {
            std::ofstream bf(fs::path(dir) / "data.bin", std::ios::binary);
            if (!bf) fail(ErrorKind::io, "cannot write " + dir + "/data.bin");
            for (auto& [name, t] : tensors)
                bf.write(reinterpret_cast<const char*>(t.data()), t.numel() * 4);
            if (!bf) fail(ErrorKind::io, "short write to " + dir + "/data.bin");
        }
    }

    static TensorContainer read(const std::string& dir) {
        namespace fs = std::filesystem;
        std::ifstream mf(fs::path(dir) / "manifest.json", std::ios::binary);
        if (!mf) fail(ErrorKind::io, "cannot read " + dir + "/manifest.json");
        nlohmann::json manifest;
        try {
            mf >> manifest;
        } catch (const std::exception& e) {
            fail(ErrorKind::io, std::string("bad manifest: ") + e.what());
        }
        DAG_CHECK(manifest.value("format_version", 0) == 1, io,
                  "unsupported container format_version in " + dir);
        std::ifstream bf(fs::path(dir) / "data.bin", std::ios::binary);
        if (!bf) fail(ErrorKind::io, "cannot read " + dir + "/data.bin");

        TensorContainer c;
        for (auto& e : manifest.at("tensors")) {
            std::string name = e.at("name");
            DAG_CHECK(e.at("dtype") == "f32", io, "unsupported dtype for tensor " + name);
            Shape shape = e.at("shape").get<Shape>();
            uint64_t offset = e.at("byte_offset");
            uint64_t bytes = e.at("byte_length");
            DAG_CHECK(bytes == static_cast<uint64_t>(shape_numel(shape)) * 4, io,
                      "byte_length mismatch for tensor " + name);
            std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
            bf.seekg(static_cast<std::streamoff>(offset));
            bf.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
            if (!bf) fail(ErrorKind::io, "short read for tensor " + name + " in " + dir);
            c.tensors.emplace_back(name, Tensor::from(shape, std::move(data)));
        }
        return c;
    }
};

}  // namespace dag
