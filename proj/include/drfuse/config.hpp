#pragma once

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace drfuse {

// Ordered key=value store used for run configs, sequence manifests and
// checkpoint indexes. Values are kept as strings so that
// parse -> serialize -> parse is a fixed point; typed setters format
// numbers with enough digits to round-trip doubles exactly.
class KeyValueFile {
  public:
    bool has(const std::string& key) const { return find(key) >= 0; }

    void set(const std::string& key, const std::string& value) {
        if (key.empty()) throw std::invalid_argument("KeyValueFile: empty key");
        if (key.find('=') != std::string::npos || key.find('\n') != std::string::npos)
            throw std::invalid_argument("KeyValueFile: key contains '=' or newline");
        if (value.find('\n') != std::string::npos)
            throw std::invalid_argument("KeyValueFile: value contains newline");
        int i = find(key);
        if (i >= 0)
            entries_[static_cast<std::size_t>(i)].second = value;
        else
            entries_.emplace_back(key, value);
    }

    void set_int(const std::string& key, long long v) { set(key, std::to_string(v)); }

    void set_double(const std::string& key, double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        set(key, buf);
    }

    const std::string& get(const std::string& key) const {
        int i = find(key);
        if (i < 0) throw std::runtime_error("config: missing key '" + key + "'");
        return entries_[static_cast<std::size_t>(i)].second;
    }

    std::string get_or(const std::string& key, const std::string& dflt) const {
        int i = find(key);
        return i < 0 ? dflt : entries_[static_cast<std::size_t>(i)].second;
    }

    long long get_int(const std::string& key) const { return parse_int(get(key), key); }

    long long get_int_or(const std::string& key, long long dflt) const {
        int i = find(key);
        return i < 0 ? dflt : parse_int(entries_[static_cast<std::size_t>(i)].second, key);
    }

    double get_double(const std::string& key) const { return parse_double(get(key), key); }

    double get_double_or(const std::string& key, double dflt) const {
        int i = find(key);
        return i < 0 ? dflt : parse_double(entries_[static_cast<std::size_t>(i)].second, key);
    }

    bool get_bool_or(const std::string& key, bool dflt) const {
        int i = find(key);
        if (i < 0) return dflt;
        const std::string& v = entries_[static_cast<std::size_t>(i)].second;
        if (v == "1" || v == "true" || v == "yes") return true;
        if (v == "0" || v == "false" || v == "no") return false;
        throw std::runtime_error("config: key '" + key + "' is not a boolean: " + v);
    }

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    // Rejects keys outside the allowed set; catches typos in config files.
    void require_known(const std::set<std::string>& allowed) const {
        for (const auto& [k, v] : entries_)
            if (allowed.find(k) == allowed.end())
                throw std::runtime_error("config: unknown key '" + k + "'");
    }

    std::string serialize() const {
        std::string out;
        for (const auto& [k, v] : entries_) {
            out += k;
            out += '=';
            out += v;
            out += '\n';
        }
        return out;
    }

    static KeyValueFile parse(const std::string& text, const std::string& origin = "<string>") {
        KeyValueFile kv;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            auto eq = t.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                                         ": expected key=value, got '" + t + "'");
            std::string key = trim(t.substr(0, eq));
            std::string value = trim(t.substr(eq + 1));
            if (key.empty())
                throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": empty key");
            if (kv.has(key))
                throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                                         ": duplicate key '" + key + "'");
            kv.entries_.emplace_back(key, value);
        }
        return kv;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + path);
        out << serialize();
        if (!out) throw std::runtime_error("write failed: " + path);
    }

    static KeyValueFile load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot read " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse(ss.str(), path);
    }

  private:
    static std::string trim(const std::string& s) {
        std::size_t a = s.find_first_not_of(" \t");
        if (a == std::string::npos) return "";
        std::size_t b = s.find_last_not_of(" \t");
        return s.substr(a, b - a + 1);
    }

    static long long parse_int(const std::string& v, const std::string& key) {
        try {
            std::size_t pos = 0;
            long long r = std::stoll(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("trailing");
            return r;
        } catch (const std::exception&) {
            throw std::runtime_error("config: key '" + key + "' is not an integer: " + v);
        }
    }

    static double parse_double(const std::string& v, const std::string& key) {
        try {
            std::size_t pos = 0;
            double r = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("trailing");
            return r;
        } catch (const std::exception&) {
            throw std::runtime_error("config: key '" + key + "' is not a number: " + v);
        }
    }

    int find(const std::string& key) const {
        for (std::size_t i = 0; i < entries_.size(); ++i)
            if (entries_[i].first == key) return static_cast<int>(i);
        return -1;
    }

    std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace drfuse
