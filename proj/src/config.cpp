#include "config.hpp"

#include <fstream>
#include <sstream>

#include "ct/error.hpp"

namespace ct {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError(path + ": cannot open");
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_string(ss.str(), path);
}

Config Config::parse_string(const std::string& text, const std::string& origin) {
    Config cfg;
    std::istringstream is(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": unterminated section header");
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty section name");
            continue;
        }
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected `key = value`, got `" +
                              t + "`");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        cfg.set(section.empty() ? key : section + "." + key, value);
    }
    return cfg;
}

bool Config::has(const std::string& key) const {
    for (const auto& kv : entries_)
        if (kv.first == key) return true;
    return false;
}

std::string Config::get(const std::string& key) const {
    for (const auto& kv : entries_)
        if (kv.first == key) return kv.second;
    throw ConfigError("missing required key: " + key);
}

std::string Config::get_or(const std::string& key, const std::string& fallback) const {
    for (const auto& kv : entries_)
        if (kv.first == key) return kv.second;
    return fallback;
}

int64_t Config::get_int(const std::string& key) const {
    const std::string v = get(key);
    try {
        return std::stoll(v);
    } catch (...) {
        throw ConfigError(key + ": expected integer, got `" + v + "`");
    }
}

int64_t Config::get_int_or(const std::string& key, int64_t fallback) const {
    return has(key) ? get_int(key) : fallback;
}

double Config::get_double(const std::string& key) const {
    const std::string v = get(key);
    try {
        return std::stod(v);
    } catch (...) {
        throw ConfigError(key + ": expected number, got `" + v + "`");
    }
}

double Config::get_double_or(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

bool Config::get_bool_or(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected boolean, got `" + v + "`");
}

std::vector<int64_t> Config::get_int_list_or(const std::string& key,
                                             std::vector<int64_t> fallback) const {
    if (!has(key)) return fallback;
    std::vector<int64_t> out;
    std::istringstream is(get(key));
    std::string tok;
    while (std::getline(is, tok, ',')) {
        try {
            out.push_back(std::stoll(tok));
        } catch (...) {
            throw ConfigError(key + ": expected comma-separated integers, got `" + tok + "`");
        }
    }
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
}

void Config::set(const std::string& key, const std::string& value) {
    for (auto& kv : entries_) {
        if (kv.first == key) {
            kv.second = value;
            return;
        }
    }
    entries_.emplace_back(key, value);
}

void Config::set_int(const std::string& key, int64_t value) { set(key, std::to_string(value)); }

void Config::set_double(const std::string& key, double value) {
    std::ostringstream os;
    os.precision(17);
    os << value;
    set(key, os.str());
}

std::string Config::serialize() const {
    // group by section, keeping first-seen order of sections and keys
    std::vector<std::string> sections;
    auto section_of = [](const std::string& key) {
        const size_t dot = key.rfind('.');
        return dot == std::string::npos ? std::string() : key.substr(0, dot);
    };
    for (const auto& kv : entries_) {
        const std::string s = section_of(kv.first);
        bool seen = false;
        for (const auto& t : sections) seen |= (t == s);
        if (!seen) sections.push_back(s);
    }
    std::ostringstream os;
    for (size_t si = 0; si < sections.size(); ++si) {
        const std::string& s = sections[si];
        if (!s.empty()) os << (si ? "\n" : "") << "[" << s << "]\n";
        for (const auto& kv : entries_) {
            if (section_of(kv.first) != s) continue;
            const std::string leaf =
                s.empty() ? kv.first : kv.first.substr(s.size() + 1);
            os << leaf << " = " << kv.second << "\n";
        }
    }
    return os.str();
}

}  // namespace ct
