#include "vaeac/config.hpp"

#include <fstream>
#include <sstream>

namespace vaeac {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

KvConfig KvConfig::parse_text(const std::string& text) {
    KvConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        }
        cfg.entries.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

KvConfig KvConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str());
}

void KvConfig::set(const std::string& key, const std::string& value) {
    entries.emplace_back(key, value);
}

bool KvConfig::has(const std::string& key) const { return find(key).has_value(); }

std::optional<std::string> KvConfig::find(const std::string& key) const {
    std::optional<std::string> out;
    for (const auto& [k, v] : entries) {
        if (k == key) out = v;  // last one wins
    }
    return out;
}

std::string KvConfig::get_string(const std::string& key) const {
    auto v = find(key);
    if (!v) throw ConfigError("missing required config key: " + key);
    return *v;
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
    return find(key).value_or(fallback);
}

double KvConfig::get_double(const std::string& key, double fallback) const {
    auto v = find(key);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        const double d = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument("");
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + *v + "'");
    }
}

long KvConfig::get_long(const std::string& key, long fallback) const {
    auto v = find(key);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        const long n = std::stol(*v, &used);
        if (used != v->size()) throw std::invalid_argument("");
        return n;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + *v + "'");
    }
}

std::string KvConfig::render() const {
    // Resolved view: last writer wins, first-seen key order preserved.
    std::vector<std::pair<std::string, std::string>> resolved;
    for (const auto& [k, v] : entries) {
        bool found = false;
        for (auto& r : resolved) {
            if (r.first == k) {
                r.second = v;
                found = true;
                break;
            }
        }
        if (!found) resolved.emplace_back(k, v);
    }
    std::ostringstream out;
    for (const auto& [k, v] : resolved) out << k << "=" << v << "\n";
    return out.str();
}

}  // namespace vaeac
