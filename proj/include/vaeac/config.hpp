#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vaeac/common.hpp"

namespace vaeac {

// Flat key=value config text: one pair per line, '#' comments, blank lines
// ignored. Later entries win, so flag overrides can simply be appended.
struct KvConfig {
    std::vector<std::pair<std::string, std::string>> entries;

    static KvConfig parse_file(const std::string& path);
    static KvConfig parse_text(const std::string& text);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;
    std::optional<std::string> find(const std::string& key) const;

    std::string get_string(const std::string& key) const;  // throws if absent
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long get_long(const std::string& key, long fallback) const;

    // Deterministic render used for the resolved-config echo.
    std::string render() const;
};

std::string trim(const std::string& s);

}  // namespace vaeac
