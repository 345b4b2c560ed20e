#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "losf/common.hpp"

namespace losf {

// Flat key-value config file: one `key = value` per line, '#' starts a
// comment, blank lines ignored. Consumers declare the keys they understand;
// anything else is reported as a warning, not an error.
class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ContractError("cannot open config file: " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse_string(ss.str(), path);
    }

    static KeyValueConfig parse_string(const std::string& text, const std::string& origin = "<string>") {
        KeyValueConfig cfg;
        cfg.origin_ = origin;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ContractError(origin + ":" + std::to_string(lineno) + ": expected key = value");
            std::string key = trim(line.substr(0, eq));
            std::string value = trim(line.substr(eq + 1));
            if (key.empty())
                throw ContractError(origin + ":" + std::to_string(lineno) + ": empty key");
            cfg.values_[key] = value;
        }
        return cfg;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::optional<std::string> get_string(const std::string& key) const {
        consumed_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) return std::nullopt;
        return it->second;
    }

    std::optional<double> get_double(const std::string& key) const {
        auto s = get_string(key);
        if (!s) return std::nullopt;
        std::size_t pos = 0;
        double v = std::stod(*s, &pos);
        if (pos != s->size()) throw ContractError(origin_ + ": key '" + key + "': bad number '" + *s + "'");
        return v;
    }

    std::optional<long long> get_int(const std::string& key) const {
        auto s = get_string(key);
        if (!s) return std::nullopt;
        std::size_t pos = 0;
        long long v = std::stoll(*s, &pos);
        if (pos != s->size()) throw ContractError(origin_ + ": key '" + key + "': bad integer '" + *s + "'");
        return v;
    }

    std::optional<std::uint64_t> get_u64(const std::string& key) const {
        auto s = get_string(key);
        if (!s) return std::nullopt;
        std::size_t pos = 0;
        std::uint64_t v = std::stoull(*s, &pos);
        if (pos != s->size()) throw ContractError(origin_ + ": key '" + key + "': bad integer '" + *s + "'");
        return v;
    }

    std::optional<bool> get_bool(const std::string& key) const {
        auto s = get_string(key);
        if (!s) return std::nullopt;
        if (*s == "true" || *s == "1") return true;
        if (*s == "false" || *s == "0") return false;
        throw ContractError(origin_ + ": key '" + key + "': bad bool '" + *s + "'");
    }

    // Comma-separated list of doubles, e.g. family_mix = 0.5,0.125,0.125,0.125,0.125
    std::optional<std::vector<double>> get_double_list(const std::string& key) const {
        auto s = get_string(key);
        if (!s) return std::nullopt;
        std::vector<double> out;
        std::istringstream in(*s);
        std::string tok;
        while (std::getline(in, tok, ',')) {
            tok = trim(tok);
            if (tok.empty()) throw ContractError(origin_ + ": key '" + key + "': empty list element");
            out.push_back(std::stod(tok));
        }
        return out;
    }

    // Keys present in the file but never consumed by any getter.
    std::vector<std::string> unknown_keys() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : values_)
            if (!consumed_.count(k)) out.push_back(k);
        return out;
    }

    const std::string& origin() const { return origin_; }

private:
    static std::string trim(const std::string& s) {
        auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
    mutable std::set<std::string> consumed_;
    std::string origin_ = "<empty>";
};

}  // namespace losf
