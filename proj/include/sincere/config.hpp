#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sincere/errors.hpp"
#include "sincere/version.hpp"

namespace sincere {

/// Plain-text key-value configuration: one `key = value` per line, `#`
/// comments, a mandatory-if-present `schema_version`. CLI flags override
/// file keys via set(). Keys are case-sensitive.
class Config {
public:
    Config() = default;

    static Config from_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw io_error("config: cannot open " + path.string());
        std::stringstream buf;
        buf << in.rdbuf();
        return from_string(buf.str(), path.string());
    }

    static Config from_string(const std::string& text, const std::string& origin = "<string>") {
        Config cfg;
        std::istringstream in(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string stripped = trim(line.substr(0, line.find('#')));
            if (stripped.empty()) continue;
            const auto eq = stripped.find('=');
            if (eq == std::string::npos)
                throw config_error(origin + ":" + std::to_string(lineno) +
                                   ": expected 'key = value', got '" + stripped + "'");
            const std::string key = trim(stripped.substr(0, eq));
            const std::string value = trim(stripped.substr(eq + 1));
            if (key.empty())
                throw config_error(origin + ":" + std::to_string(lineno) + ": empty key");
            if (cfg.values_.count(key))
                throw config_error(origin + ":" + std::to_string(lineno) + ": duplicate key '" +
                                   key + "'");
            cfg.values_[key] = value;
        }
        if (cfg.has("schema_version") && cfg.get_u64("schema_version") !=
                                             static_cast<std::uint64_t>(kConfigSchemaVersion))
            throw config_error(origin + ": unsupported schema_version " +
                               cfg.values_.at("schema_version"));
        return cfg;
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback = "") const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback = 0) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            return std::stoull(it->second);
        } catch (const std::exception&) {
            throw config_error("config: key '" + key + "' is not an unsigned integer: '" +
                               it->second + "'");
        }
    }

    double get_double(const std::string& key, double fallback = 0.0) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
            return v;
        } catch (const std::exception&) {
            throw config_error("config: key '" + key + "' is not a number: '" + it->second + "'");
        }
    }

    bool get_bool(const std::string& key, bool fallback = false) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw config_error("config: key '" + key + "' is not a boolean: '" + it->second + "'");
    }

    std::vector<double> get_double_list(const std::string& key,
                                        std::vector<double> fallback = {}) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<double> out;
        std::istringstream in(it->second);
        std::string item;
        while (std::getline(in, item, ',')) {
            try {
                out.push_back(std::stod(trim(item)));
            } catch (const std::exception&) {
                throw config_error("config: key '" + key + "' has a non-numeric entry: '" + item +
                                   "'");
            }
        }
        if (out.empty())
            throw config_error("config: key '" + key + "' is an empty list");
        return out;
    }

    std::vector<std::uint64_t> get_u64_list(const std::string& key,
                                            std::vector<std::uint64_t> fallback = {}) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<std::uint64_t> out;
        for (double v : get_double_list(key)) {
            if (v < 0 || v != static_cast<double>(static_cast<std::uint64_t>(v)))
                throw config_error("config: key '" + key + "' must hold unsigned integers");
            out.push_back(static_cast<std::uint64_t>(v));
        }
        return out;
    }

    std::vector<std::string> get_string_list(const std::string& key) const {
        const auto it = values_.find(key);
        std::vector<std::string> out;
        if (it == values_.end()) return out;
        std::istringstream in(it->second);
        std::string item;
        while (std::getline(in, item, ',')) out.push_back(trim(item));
        return out;
    }

    const std::map<std::string, std::string>& values() const { return values_; }

    /// Rejects keys outside the command's documented schema (typo guard).
    void restrict_keys(const std::vector<std::string>& allowed) const {
        for (const auto& [key, value] : values_) {
            if (key == "schema_version") continue;
            bool ok = false;
            for (const auto& a : allowed) ok = ok || a == key;
            if (!ok) throw config_error("config: unknown key '" + key + "'");
        }
    }

private:
    static std::string trim(const std::string& s) {
        const auto begin = s.find_first_not_of(" \t\r\n");
        if (begin == std::string::npos) return "";
        const auto end = s.find_last_not_of(" \t\r\n");
        return s.substr(begin, end - begin + 1);
    }

    std::map<std::string, std::string> values_;
};

} // namespace sincere
