#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ct {

// Line-oriented `key = value` configuration with [section] headers. Keys are
// stored flat as "section.key" ("" section for the preamble). Parse errors
// carry file and line so the CLI can print anchored diagnostics.
class Config {
public:
    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& key) const;

    std::string get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    int64_t get_int(const std::string& key) const;
    int64_t get_int_or(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key) const;
    double get_double_or(const std::string& key, double fallback) const;
    bool get_bool_or(const std::string& key, bool fallback) const;
    std::vector<int64_t> get_int_list_or(const std::string& key, std::vector<int64_t> fallback) const;

    void set(const std::string& key, const std::string& value);
    void set_int(const std::string& key, int64_t value);
    void set_double(const std::string& key, double value);

    // Round-trippable text, grouped by section in first-seen order.
    std::string serialize() const;

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace ct
