#pragma once

#include <cerrno>
#include <cmath>
#include <limits>
#include <type_traits>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dgtl/errors.hpp"

namespace dgtl {

/// Ordered `key = value` lines; `#` starts a comment.
using KeyValueList = std::vector<std::pair<std::string, std::string>>;

/// Shortest text that parses back to exactly `v`.
inline std::string format_double(double v) {
    char buf[40];
    for (int precision = 15; precision <= 17; ++precision) {
        std::snprintf(buf, sizeof buf, "%.*g", precision, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

template <typename T>
std::string format_list(const std::vector<T>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        if constexpr (std::is_floating_point_v<T>) out += format_double(xs[i]);
        else out += std::to_string(xs[i]);
    }
    return out;
}

/// Values looked up by key, with typed accessors that raise ConfigError
/// naming the key. Tracks which keys were read so leftovers can be reported.
class KeyValues {
public:
    KeyValues() = default;

    static KeyValues parse(std::istream& in, const std::string& source = "config") {
        KeyValues kv;
        std::string line;
        long row = 0;
        while (std::getline(in, line)) {
            ++row;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(source + ":" + std::to_string(row) + ": expected 'key = value'");
            kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        return kv;
    }

    static KeyValues load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IOError("cannot open config file " + path);
        return parse(in, path);
    }

    static KeyValues from(const KeyValueList& list) {
        KeyValues kv;
        for (const auto& [k, v] : list) kv.set(k, v);
        return kv;
    }

    void set(const std::string& key, const std::string& value) {
        if (key.empty()) throw ConfigError("empty config key");
        values_[key] = value;
    }

    /// Later values win.
    void merge(const KeyValues& other) {
        for (const auto& [k, v] : other.values_) values_[k] = v;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    template <typename T>
    void read(const std::string& key, T& target) {
        auto it = values_.find(key);
        if (it == values_.end()) return;
        used_.insert(key);
        target = convert<T>(key, it->second);
    }

    template <typename T, typename Parse>
    void read_with(const std::string& key, T& target, Parse parse) {
        auto it = values_.find(key);
        if (it == values_.end()) return;
        used_.insert(key);
        target = parse(it->second);
    }

    void require_all_used() const {
        for (const auto& [k, v] : values_)
            if (!used_.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    template <typename T>
    static T convert(const std::string& key, const std::string& text) {
        auto fail = [&]() -> T { throw ConfigError("config key '" + key + "': cannot parse '" + text + "'"); };
        if constexpr (std::is_same_v<T, std::string>) {
            return text;
        } else if constexpr (std::is_same_v<T, bool>) {
            if (text == "true" || text == "1") return true;
            if (text == "false" || text == "0") return false;
            return fail();
        } else if constexpr (std::is_floating_point_v<T>) {
            char* end = nullptr;
            const double v = std::strtod(text.c_str(), &end);
            if (text.empty() || *end != '\0') return fail();
            return static_cast<T>(v);
        } else if constexpr (std::is_integral_v<T>) {
            if (text.empty()) return fail();
            char* end = nullptr;
            errno = 0;
            if constexpr (std::is_unsigned_v<T>) {
                if (text[0] == '-') return fail();
                const unsigned long long v = std::strtoull(text.c_str(), &end, 10);
                if (*end != '\0' || errno) return fail();
                return static_cast<T>(v);
            } else {
                const long long v = std::strtoll(text.c_str(), &end, 10);
                if (*end != '\0' || errno || v < std::numeric_limits<T>::min() || v > std::numeric_limits<T>::max())
                    return fail();
                return static_cast<T>(v);
            }
        } else if constexpr (std::is_same_v<T, std::vector<int>> || std::is_same_v<T, std::vector<double>>) {
            T out;
            if (text.empty() || text == "none") return out;
            std::stringstream ss(text);
            std::string item;
            while (std::getline(ss, item, ','))
                out.push_back(convert<typename T::value_type>(key, trim(item)));
            return out;
        } else {
            static_assert(sizeof(T) == 0, "unsupported config value type");
        }
    }

    std::map<std::string, std::string> values_;
    std::set<std::string> used_;
};

}  // namespace dgtl
