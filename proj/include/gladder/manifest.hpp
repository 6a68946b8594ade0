#pragma once

// Run manifest written next to every artifact a command produces: which
// command ran, with which config hash and seed, and the fingerprint of each
// artifact file so a manifest can be verified later.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <string>
#include <vector>

#include "gladder/binio.hpp"
#include "gladder/errors.hpp"

namespace gladder {

struct RunManifest {
    std::string command;
    std::uint64_t config_hash = 0;
    std::string graph_path;
    std::string cache_path;
    std::string checkpoint_path;
    std::uint64_t seed = 0;
    std::string timestamp;

    struct Artifact {
        std::string path;
        std::uint64_t fnv64 = 0;
    };
    std::vector<Artifact> artifacts;

    void add_artifact(const std::string& path) {
        auto bytes = detail::read_file_bytes(path);
        artifacts.push_back({path, detail::fnv1a64_bytes(bytes.data(), bytes.size())});
    }

    void stamp_now() {
        std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        char buf[32];
        std::tm tm_utc{};
        gmtime_r(&t, &tm_utc);
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
        timestamp = buf;
    }

    std::string to_json() const {
        auto esc = [](const std::string& s) {
            std::string out;
            for (char c : s) {
                if (c == '"' || c == '\\') out += '\\';
                out += c;
            }
            return out;
        };
        char buf[32];
        std::string s = "{\"command\":\"" + esc(command) + "\"";
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(config_hash));
        s += ",\"config_hash\":\"" + std::string(buf) + "\"";
        s += ",\"graph\":\"" + esc(graph_path) + "\"";
        if (!cache_path.empty()) s += ",\"cache\":\"" + esc(cache_path) + "\"";
        if (!checkpoint_path.empty()) s += ",\"checkpoint\":\"" + esc(checkpoint_path) + "\"";
        s += ",\"seed\":" + std::to_string(seed);
        s += ",\"timestamp\":\"" + esc(timestamp) + "\"";
        s += ",\"artifacts\":[";
        for (std::size_t i = 0; i < artifacts.size(); ++i) {
            if (i) s += ",";
            std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(artifacts[i].fnv64));
            s += "{\"path\":\"" + esc(artifacts[i].path) + "\",\"fnv64\":\"" + buf + "\"}";
        }
        s += "]}";
        return s;
    }

    void write(const std::string& path) const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw RuntimeFailure("cannot write manifest: " + path);
        out << to_json() << "\n";
    }

    // Re-hashes every referenced artifact; false if any is missing or changed.
    bool verify() const {
        for (const auto& a : artifacts) {
            std::ifstream in(a.path, std::ios::binary);
            if (!in) return false;
            std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
            if (detail::fnv1a64_bytes(bytes.data(), bytes.size()) != a.fnv64) return false;
        }
        return true;
    }
};

}  // namespace gladder
