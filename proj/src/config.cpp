#include "v2x/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace v2x {
namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::from_string(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw std::runtime_error("config line " + std::to_string(lineno) +
                                         ": unterminated section header: " + t);
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty())
                throw std::runtime_error("config line " + std::to_string(lineno) +
                                         ": empty section name");
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) +
                                     ": expected key = value, got: " + t);
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        if (key.empty())
            throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
        cfg.entries_[section.empty() ? key : section + "." + key] = val;
    }
    return cfg;
}

Config Config::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return from_string(buf.str());
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    try {
        size_t pos = 0;
        double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("config key " + key + ": not a number: " + it->second);
    }
}

int64_t Config::get_int(const std::string& key, int64_t fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    try {
        size_t pos = 0;
        int64_t v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("config key " + key + ": not an integer: " + it->second);
    }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::runtime_error("config key " + key + ": not a boolean: " + v);
}

std::vector<double> Config::get_list(const std::string& key,
                                     const std::vector<double>& fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::vector<double> out;
    std::string item;
    std::istringstream in(it->second);
    while (std::getline(in, item, ',')) {
        std::string t = item;
        size_t a = t.find_first_not_of(" \t");
        size_t b = t.find_last_not_of(" \t");
        if (a == std::string::npos)
            throw std::runtime_error("config key " + key + ": empty list element");
        t = t.substr(a, b - a + 1);
        try {
            size_t pos = 0;
            double v = std::stod(t, &pos);
            if (pos != t.size()) throw std::invalid_argument(t);
            out.push_back(v);
        } catch (const std::exception&) {
            throw std::runtime_error("config key " + key + ": not a number: " + t);
        }
    }
    if (out.empty())
        throw std::runtime_error("config key " + key + ": empty list");
    return out;
}

void Config::validate_section(const std::string& section,
                              const std::vector<std::string>& valid_keys) const {
    std::string prefix = section + ".";
    for (const auto& [key, value] : entries_) {
        if (key.rfind(prefix, 0) != 0) continue;
        std::string name = key.substr(prefix.size());
        bool ok = false;
        for (const auto& v : valid_keys)
            if (v == name) { ok = true; break; }
        if (!ok) {
            std::string msg = "unknown config key '" + key + "'; valid keys in [" + section + "]: ";
            for (size_t i = 0; i < valid_keys.size(); ++i) {
                if (i) msg += ", ";
                msg += valid_keys[i];
            }
            throw std::runtime_error(msg);
        }
    }
}

}  // namespace v2x
